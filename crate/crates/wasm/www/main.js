import init, { robustCurve, compareEstimators, bounds } from "./pkg/ope_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function drawCurve() {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  $("curve-err").textContent = "";
  let pts;
  try {
    pts = JSON.parse(robustCurve(num("c-rho"), num("c-proj"), num("c-mu0"), num("c-s0"), num("c-max"), 200));
  } catch (e) {
    $("curve-err").textContent = e.message ?? String(e);
    return;
  }
  const pad = 36, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const ys = pts.flatMap((p) => [p.mean, p.variance]);
  const lo = Math.min(0, ...ys), hi = Math.max(1, ...ys);
  const X = (r) => pad + (r / pts[pts.length - 1].ratio) * w;
  const Y = (v) => pad + h - ((v - lo) / (hi - lo)) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.fillText(hi.toFixed(2), 2, pad + 4);
  ctx.fillText(lo.toFixed(2), 2, pad + h);
  ctx.fillText("ratio " + pts[pts.length - 1].ratio, pad + w - 50, pad + h + 20);
  for (const [key, color] of [["mean", "#1565c0"], ["variance", "#c62828"]]) {
    ctx.beginPath();
    pts.forEach((p, i) => (i ? ctx.lineTo(X(p.ratio), Y(p[key])) : ctx.moveTo(X(p.ratio), Y(p[key]))));
    ctx.strokeStyle = color;
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(key, pad + 8, key === "mean" ? pad + 14 : pad + 28);
  }
}

function runEstimators() {
  const out = $("est-out");
  out.textContent = "running...";
  setTimeout(() => {
    try {
      const r = JSON.parse(compareEstimators(num("e-ctx"), num("e-act"), num("e-n"), num("e-rep"), num("e-shift"), BigInt(num("e-seed"))));
      const rows = r.rows
        .map((x) => `<tr><td>${x.estimator}</td><td>${x.mean_estimate.toFixed(4)}</td><td>${x.rmse.toFixed(4)}</td></tr>`)
        .join("");
      out.innerHTML = `<p>true value ${r.true_value.toFixed(4)}, ${r.repeats} datasets</p>
        <table><tr><th>estimator</th><th>mean estimate</th><th>rmse</th></tr>${rows}</table>`;
    } catch (e) {
      out.innerHTML = `<span class="err">${e.message ?? e}</span>`;
    }
  }, 10);
}

function updateBounds() {
  const inputs = {
    w: num("b-w"), b: num("b-b"), eta1: num("b-eta1"), eta2: num("b-eta2"),
    l: num("b-l"), n: num("b-n"), delta: num("b-delta"), e_p_wr: num("b-epr"),
  };
  try {
    const r = JSON.parse(bounds(JSON.stringify(inputs)));
    $("bounds-out").textContent =
      `bias ≤ ${r.bias.toPrecision(3)}, variance ≤ ${r.variance.toPrecision(3)}, minimax risk ≥ ${r.minimax.toPrecision(3)}`;
  } catch (e) {
    $("bounds-out").innerHTML = `<span class="err">${e.message ?? e}</span>`;
  }
}

await init();
document.querySelectorAll("[id^=c-]").forEach((el) => el.addEventListener("input", drawCurve));
document.querySelectorAll("[id^=b-]").forEach((el) => el.addEventListener("input", updateBounds));
$("e-run").addEventListener("click", runEstimators);
drawCurve();
updateBounds();
