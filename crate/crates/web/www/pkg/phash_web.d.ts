/* tslint:disable */
/* eslint-disable */

export class AttackOutcome {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly delta: number;
    readonly finalHash: string;
    readonly initialHash: string;
    /**
     * 64×64 RGBA pixels of the perturbed image.
     */
    readonly rgba: Uint8Array;
    readonly ssim: number;
    readonly steps: number;
    readonly success: boolean;
}

/**
 * The seeded desk pipeline: 64×64×3 input, 128-d embedding, 96-bit hash.
 */
export class Lab {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Standard gradient evasion until more than `delta0` of the bits flip.
     */
    evade(rgba: Uint8Array, width: number, height: number, delta0: number): AttackOutcome;
    /**
     * 96-bit hash as 24 hex digits.
     */
    hash(rgba: Uint8Array, width: number, height: number): string;
    constructor(network_seed: bigint, matrix_seed: bigint);
    side(): number;
    /**
     * 64×64 RGBA pixels of a procedural scene.
     */
    syntheticScene(seed: bigint): Uint8Array;
    /**
     * Applies one transform (`rotate`, `translate`, `flip_horizontal`,
     * `flip_vertical`, `hue_shift`, `brightness`, `contrast`, `jpeg`) and
     * reports the normalized Hamming distance to the original hash.
     */
    transform(rgba: Uint8Array, width: number, height: number, kind: string, amount: number): TransformOutcome;
}

export class TransformOutcome {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly delta: number;
    readonly hash: string;
    readonly rgba: Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_attackoutcome_free: (a: number, b: number) => void;
    readonly __wbg_lab_free: (a: number, b: number) => void;
    readonly __wbg_transformoutcome_free: (a: number, b: number) => void;
    readonly attackoutcome_delta: (a: number) => number;
    readonly attackoutcome_finalHash: (a: number) => [number, number];
    readonly attackoutcome_initialHash: (a: number) => [number, number];
    readonly attackoutcome_rgba: (a: number) => [number, number];
    readonly attackoutcome_ssim: (a: number) => number;
    readonly attackoutcome_steps: (a: number) => number;
    readonly attackoutcome_success: (a: number) => number;
    readonly lab_evade: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly lab_hash: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly lab_new: (a: bigint, b: bigint) => [number, number, number];
    readonly lab_side: (a: number) => number;
    readonly lab_syntheticScene: (a: number, b: bigint) => [number, number];
    readonly lab_transform: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly transformoutcome_delta: (a: number) => number;
    readonly transformoutcome_hash: (a: number) => [number, number];
    readonly transformoutcome_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
