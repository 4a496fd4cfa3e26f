import init, { kernelCurves, priorDraws, syntheticFit } from "./pkg/cmde_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function niceTicks(lo, hi, target) {
  const raw = (hi - lo) / target;
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  const step = [1, 2, 2.5, 5, 10].map((m) => m * mag).find((s) => s >= raw);
  const out = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + 1e-12; v += step) out.push(Math.abs(v) < 1e-12 ? 0 : v);
  return out;
}

// Axes with padded ranges; returns coordinate maps.
function frame(ctx, xs, ys) {
  const { width, height } = ctx.canvas;
  const m = { l: 56, r: 12, t: 12, b: 30 };
  let [xlo, xhi] = [Math.min(...xs), Math.max(...xs)];
  let [ylo, yhi] = [Math.min(...ys), Math.max(...ys)];
  if (yhi - ylo < 1e-9) { ylo -= 0.5; yhi += 0.5; }
  const pad = 0.05 * (yhi - ylo);
  ylo -= pad; yhi += pad;
  const tx = (x) => m.l + ((x - xlo) / (xhi - xlo)) * (width - m.l - m.r);
  const ty = (y) => height - m.b - ((y - ylo) / (yhi - ylo)) * (height - m.t - m.b);
  ctx.clearRect(0, 0, width, height);
  ctx.strokeStyle = "#444";
  ctx.fillStyle = "#222";
  ctx.font = "11px sans-serif";
  ctx.strokeRect(m.l, m.t, width - m.l - m.r, height - m.t - m.b);
  ctx.textAlign = "center";
  for (const t of niceTicks(xlo, xhi, 8)) ctx.fillText(String(+t.toFixed(3)), tx(t), height - m.b + 14);
  ctx.textAlign = "right";
  for (const t of niceTicks(ylo, yhi, 5)) ctx.fillText(String(+t.toFixed(3)), m.l - 6, ty(t) + 4);
  return { tx, ty };
}

function line(ctx, f, xs, ys, color, dashed = false, width = 1.8) {
  ctx.beginPath();
  ctx.setLineDash(dashed ? [6, 4] : []);
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  xs.forEach((x, i) => (i ? ctx.lineTo(f.tx(x), f.ty(ys[i])) : ctx.moveTo(f.tx(x), f.ty(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.lineWidth = 1;
}

function band(ctx, f, xs, lo, hi, color) {
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(f.tx(x), f.ty(lo[i])) : ctx.moveTo(f.tx(x), f.ty(lo[i]))));
  for (let i = xs.length - 1; i >= 0; i--) ctx.lineTo(f.tx(xs[i]), f.ty(hi[i]));
  ctx.closePath();
  ctx.globalAlpha = 0.18;
  ctx.fillStyle = color;
  ctx.fill();
  ctx.globalAlpha = 1;
}

function legend(ctx, items) {
  ctx.textAlign = "left";
  items.forEach(([label, color], k) => {
    ctx.fillStyle = color;
    ctx.fillRect(66, 20 + 15 * k, 14, 3);
    ctx.fillStyle = "#222";
    ctx.fillText(label, 86, 25 + 15 * k);
  });
}

function guard(statusId, fn) {
  const status = $(statusId);
  try {
    status.className = "status";
    const t0 = performance.now();
    const msg = fn();
    status.textContent = `${msg} (${(performance.now() - t0).toFixed(0)} ms)`;
  } catch (e) {
    status.className = "status error";
    status.textContent = String(e);
  }
}

function runKernel() {
  guard("k-status", () => {
    const anchors = $("k-anchors").value.split(",").map(Number).filter((v) => Number.isFinite(v));
    const res = JSON.parse(kernelCurves(JSON.stringify({
      activation: $("k-act").value, sigma_w2: num("k-s2"), depth: num("k-depth"),
      anchors, from: -10, to: 10, points: 401,
    })));
    const ctx = $("k-canvas").getContext("2d");
    const f = frame(ctx, res.x, res.curves.flatMap((c) => c.values));
    res.curves.forEach((c, i) => line(ctx, f, res.x, c.values, COLORS[i % COLORS.length]));
    legend(ctx, res.curves.map((c, i) => [`k(${c.anchor}, x)`, COLORS[i % COLORS.length]]));
    return `${res.curves.length} curves`;
  });
}

function runPrior() {
  guard("p-status", () => {
    const res = JSON.parse(priorDraws(JSON.stringify({
      activation: $("p-act").value, sigma_w2: 0.1, width: num("p-width"), draws: num("p-draws"), seed: num("p-seed"),
      alpha: { alpha_h: num("p-ah"), alpha_t: num("p-at"), alpha_ht: num("p-aht") },
      from: -10, to: 10, points: 201,
    })));
    const show = $("p-show").value;
    const curve = (d) => (show === "f0" ? d.f0 : show === "f1" ? d.f1 : d.f1.map((v, i) => v - d.f0[i]));
    const sd = show === "f0" ? res.sd0 : show === "f1" ? res.sd1 : res.cate_sd;
    const lo = sd.map((s) => -2 * s);
    const hi = sd.map((s) => 2 * s);
    const curves = res.draws.map(curve);
    const ctx = $("p-canvas").getContext("2d");
    const f = frame(ctx, res.x, curves.flat().concat(lo, hi));
    band(ctx, f, res.x, lo, hi, "#7f7f7f");
    curves.forEach((c, i) => line(ctx, f, res.x, c, COLORS[i % COLORS.length], false, 1.2));
    legend(ctx, [["analytic ±2 sd", "#7f7f7f"], ["baselearner draws", COLORS[0]]]);
    return `${curves.length} draws`;
  });
}

function runFit() {
  guard("f-status", () => {
    const res = JSON.parse(syntheticFit(JSON.stringify({
      n: num("f-n"), seed: num("f-seed"),
      alpha: { alpha_h: num("f-ah"), alpha_t: num("f-at"), alpha_ht: num("f-aht") },
      sigma_w2: 0.1, noise_variance: num("f-noise"), from: -10, to: 10, points: 241,
    })));
    const ctx = $("f-canvas").getContext("2d");
    const lo = (m, s) => m.map((v, i) => v - 2 * s[i]);
    const hi = (m, s) => m.map((v, i) => v + 2 * s[i]);
    const ys = res.data_y.concat(lo(res.mean0, res.sd0), hi(res.mean1, res.sd1), lo(res.cate, res.cate_sd), hi(res.cate, res.cate_sd));
    const f = frame(ctx, res.x, ys);
    res.data_x.forEach((x, i) => {
      ctx.fillStyle = res.data_t[i] ? "#fdae6b" : "#9ecae1";
      ctx.beginPath();
      ctx.arc(f.tx(x), f.ty(res.data_y[i]), 1.8, 0, 2 * Math.PI);
      ctx.fill();
    });
    band(ctx, f, res.x, lo(res.mean0, res.sd0), hi(res.mean0, res.sd0), "#1f77b4");
    band(ctx, f, res.x, lo(res.mean1, res.sd1), hi(res.mean1, res.sd1), "#d62728");
    band(ctx, f, res.x, lo(res.cate, res.cate_sd), hi(res.cate, res.cate_sd), "#2ca02c");
    line(ctx, f, res.x, res.mean0, "#1f77b4");
    line(ctx, f, res.x, res.mean1, "#d62728");
    line(ctx, f, res.x, res.cate, "#2ca02c");
    line(ctx, f, res.x, res.x.map(() => 1), "#000", true, 1);
    legend(ctx, [["mean, t=0", "#1f77b4"], ["mean, t=1", "#d62728"], ["effect", "#2ca02c"], ["true effect", "#000"]]);
    return `sqrt-PEHE on training rows ${res.sqrt_pehe.toFixed(4)}, jitter ${res.jitter}`;
  });
}

await init();
$("k-run").onclick = runKernel;
$("p-run").onclick = runPrior;
$("f-run").onclick = runFit;
runKernel();
runPrior();
runFit();
