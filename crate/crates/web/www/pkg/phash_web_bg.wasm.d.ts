/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_attackoutcome_free: (a: number, b: number) => void;
export const __wbg_lab_free: (a: number, b: number) => void;
export const __wbg_transformoutcome_free: (a: number, b: number) => void;
export const attackoutcome_delta: (a: number) => number;
export const attackoutcome_finalHash: (a: number) => [number, number];
export const attackoutcome_initialHash: (a: number) => [number, number];
export const attackoutcome_rgba: (a: number) => [number, number];
export const attackoutcome_ssim: (a: number) => number;
export const attackoutcome_steps: (a: number) => number;
export const attackoutcome_success: (a: number) => number;
export const lab_evade: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const lab_hash: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const lab_new: (a: bigint, b: bigint) => [number, number, number];
export const lab_side: (a: number) => number;
export const lab_syntheticScene: (a: number, b: bigint) => [number, number];
export const lab_transform: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const transformoutcome_delta: (a: number) => number;
export const transformoutcome_hash: (a: number) => [number, number];
export const transformoutcome_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
