import init, { Lab } from "./pkg/phash_web.js";

const $ = (id) => document.getElementById(id);
const SIDE = 64;

await init();
const lab = new Lab(0n, 1n);
let pixels = null;

function draw(canvas, rgba) {
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIDE, SIDE), 0, 0);
}

// Marks hex digits that differ from the original hash.
function showHash(el, hex, reference) {
  el.innerHTML = [...hex]
    .map((ch, i) => (reference && ch !== reference[i] ? `<span class="diff">${ch}</span>` : ch))
    .join("");
}

function setImage(rgba) {
  pixels = rgba;
  draw($("original"), rgba);
  showHash($("hash"), lab.hash(rgba, SIDE, SIDE));
  $("result-hash").textContent = "–";
  $("result-info").textContent = "";
}

function report(rgba, hex, info) {
  draw($("result"), rgba);
  showHash($("result-hash"), hex, $("hash").textContent);
  $("result-info").textContent = info;
}

$("scene").onclick = () => setImage(lab.syntheticScene(BigInt($("seed").value || 0)));

$("file").onchange = async (event) => {
  const file = event.target.files[0];
  if (!file) return;
  const bitmap = await createImageBitmap(file);
  const canvas = new OffscreenCanvas(SIDE, SIDE);
  const ctx = canvas.getContext("2d");
  ctx.drawImage(bitmap, 0, 0, SIDE, SIDE);
  setImage(ctx.getImageData(0, 0, SIDE, SIDE).data);
};

$("delta0").oninput = () => ($("delta0-value").textContent = $("delta0").value);

$("evade").onclick = () => {
  if (!pixels) return;
  const r = lab.evade(pixels, SIDE, SIDE, Number($("delta0").value));
  report(
    r.rgba,
    r.finalHash,
    `${r.success ? "evaded" : "failed"} after ${r.steps} steps · δ = ${r.delta.toFixed(3)} · SSIM = ${r.ssim.toFixed(4)}`,
  );
};

$("transform").onclick = () => {
  if (!pixels) return;
  try {
    const t = lab.transform(pixels, SIDE, SIDE, $("kind").value, Number($("amount").value));
    report(t.rgba, t.hash, `δ = ${t.delta.toFixed(3)}`);
  } catch (e) {
    $("result-info").textContent = e.message;
  }
};

setImage(lab.syntheticScene(1n));
