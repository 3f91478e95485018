import init, { walk, spectrum, gaitCurves } from "./pkg/slipgait_demo.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

function extent(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  if (!Number.isFinite(lo)) return [0, 1];
  if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
  return [lo, hi];
}

// Line/scatter plot of several series sharing axes.
function plot(canvas, series, { title = "", xlabel = "", points = false, zeroAxes = false } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, m = { l: 48, r: 10, t: 22, b: 30 };
  ctx.clearRect(0, 0, W, H);
  const xs = series.flatMap((s) => s.x), ys = series.flatMap((s) => s.y);
  let [x0, x1] = extent(zeroAxes ? [...xs, 0] : xs), [y0, y1] = extent(zeroAxes ? [...ys, 0] : ys);
  const padY = 0.08 * (y1 - y0); y0 -= padY; y1 += padY;
  const sx = (x) => m.l + ((x - x0) / (x1 - x0)) * (W - m.l - m.r);
  const sy = (y) => H - m.b - ((y - y0) / (y1 - y0)) * (H - m.t - m.b);
  ctx.strokeStyle = "#999"; ctx.lineWidth = 1;
  ctx.strokeRect(m.l, m.t, W - m.l - m.r, H - m.t - m.b);
  ctx.fillStyle = "#333"; ctx.font = "12px system-ui";
  ctx.fillText(title, m.l, 15);
  ctx.fillText(xlabel, W - m.r - ctx.measureText(xlabel).width, H - 6);
  ctx.fillText(y1.toPrecision(3), 2, m.t + 10);
  ctx.fillText(y0.toPrecision(3), 2, H - m.b);
  ctx.fillText(x0.toPrecision(3), m.l, H - 16);
  if (zeroAxes) {
    ctx.strokeStyle = "#ccc";
    ctx.beginPath(); ctx.moveTo(sx(0), m.t); ctx.lineTo(sx(0), H - m.b);
    ctx.moveTo(m.l, sy(0)); ctx.lineTo(W - m.r, sy(0)); ctx.stroke();
  }
  series.forEach((s, k) => {
    ctx.strokeStyle = ctx.fillStyle = s.color || COLORS[k % COLORS.length];
    if (points) {
      s.x.forEach((x, i) => { ctx.beginPath(); ctx.arc(sx(x), sy(s.y[i]), 3.5, 0, 2 * Math.PI); ctx.fill(); });
    } else {
      ctx.lineWidth = 1.6; ctx.beginPath();
      let pen = false;
      s.x.forEach((x, i) => {
        const y = s.y[i];
        if (!Number.isFinite(y)) { pen = false; return; }
        pen ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y));
        pen = true;
      });
      ctx.stroke();
    }
    if (s.label) ctx.fillText(s.label, W - m.r - 150, m.t + 14 + 14 * k);
  });
}

let animation = null;

function drawStage(result) {
  const canvas = $("stage"), ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, scale = 150, ground = H - 30;
  if (animation) cancelAnimationFrame(animation);
  let frame = 0;
  const tick = () => {
    const pose = result.poses[frame];
    if (!pose) return;
    const cx = pose[0][0];
    const X = (x) => W / 3 + (x - cx) * scale, Y = (y) => ground - y * scale;
    ctx.clearRect(0, 0, W, H);
    ctx.strokeStyle = "#888"; ctx.beginPath(); ctx.moveTo(0, ground); ctx.lineTo(W, ground); ctx.stroke();
    // Hip trace.
    ctx.strokeStyle = "#bbb"; ctx.beginPath();
    result.hip.slice(0, frame + 1).forEach(([, x, y], i) => (i ? ctx.lineTo(X(x), Y(y)) : ctx.moveTo(X(x), Y(y))));
    ctx.stroke();
    const seg = (a, b, color, w) => {
      ctx.strokeStyle = color; ctx.lineWidth = w; ctx.beginPath();
      ctx.moveTo(X(pose[a][0]), Y(pose[a][1])); ctx.lineTo(X(pose[b][0]), Y(pose[b][1])); ctx.stroke();
    };
    seg(0, 1, "#444", 6);
    seg(0, 2, COLORS[0], 4); seg(2, 3, COLORS[0], 4);
    seg(0, 4, COLORS[1], 4); seg(4, 5, COLORS[1], 4);
    ctx.lineWidth = 1;
    ctx.fillStyle = "#333";
    ctx.fillText(`t = ${result.hip[frame][0].toFixed(2)} s`, 10, 16);
    frame += 1;
    if (frame < result.poses.length) animation = requestAnimationFrame(tick);
  };
  tick();
}

function runWalk() {
  const status = $("walk-status");
  status.className = "";
  try {
    const r = JSON.parse(walk($("mode").value, Number($("steps").value), Number($("slip").value), Number($("kp").value)));
    const n = Number($("steps").value);
    status.textContent = `${r.mode}: ${r.successful_steps}/${n} steps` + (r.failure ? `, stopped: ${r.failure}` : "");
    const k = r.steps.map((s) => s.step);
    plot($("speed"), [
      { x: k, y: r.steps.map((s) => (s.success ? s.speed : NaN)), label: "pre-impact speed" },
      { x: k, y: r.steps.map((s) => s.slip_level), label: "slip level", color: "#aaa" },
    ], { title: "speed (m/s)", xlabel: "step" });
    plot($("eta"), [{ x: k, y: r.steps.map((s) => s.mean_abs_eta_s), label: "mean |eta_s|" }], { title: "slip error (m/s)", xlabel: "step" });
    drawStage(r);
  } catch (e) {
    status.className = "err"; status.textContent = String(e);
  }
}

function runSpectrum() {
  const status = $("spec-status");
  status.className = "";
  try {
    const s = JSON.parse(spectrum(Number($("ks").value), Number($("skp").value), Number($("skd").value)));
    status.textContent = `${s.hurwitz ? "Hurwitz" : "not Hurwitz"}, slowest decay rate ${s.slowest_rate.toFixed(3)} 1/s`;
    plot($("plane"), [{ x: s.eigenvalues.map((e) => e[0]), y: s.eigenvalues.map((e) => e[1]) }],
      { title: "eigenvalues of A_perp", xlabel: "Re", points: true, zeroAxes: true });
  } catch (e) {
    status.className = "err"; status.textContent = String(e);
  }
}

await init();
$("slip").addEventListener("input", () => ($("slip-val").textContent = Number($("slip").value).toFixed(1)));
$("run").addEventListener("click", runWalk);
$("spec").addEventListener("click", runSpectrum);
const g = JSON.parse(gaitCurves(201));
plot($("gait"), g.outputs.map((y, i) => ({ x: g.theta, y, label: g.labels[i] })), { title: "desired outputs h_d(theta) (m, rad)", xlabel: "theta" });
runSpectrum();
runWalk();
