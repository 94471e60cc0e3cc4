import init, { bloch_trajectory, critical_points, lyapunov_comparison } from "./pkg/qlyap_web.js";

const $ = (id) => document.getElementById(id);
const deg = (id) => (Number($(id).value) * Math.PI) / 180;
const list = (id) => $(id).value.split(",").map((s) => Number(s.trim()));

function timed(status, fn) {
  $(status).textContent = "running…";
  // Let the status paint before the synchronous wasm call blocks.
  setTimeout(() => {
    const t0 = performance.now();
    try {
      fn();
      $(status).textContent = `${((performance.now() - t0) / 1000).toFixed(2)} s`;
    } catch (e) {
      $(status).textContent = `error: ${e.message ?? e}`;
    }
  }, 10);
}

function axes(ctx, w, h, pad, xmax, ymin, ymax, log) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, 10, w - pad - 10, h - pad - 10);
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText("0", pad - 4, h - pad + 14);
  ctx.fillText(String(xmax), w - 30, h - pad + 14);
  ctx.fillText("t", w / 2, h - pad + 26);
  const fmt = (v) => (log ? `1e${v}` : v.toFixed(2));
  ctx.fillText(fmt(ymax), 4, 20);
  ctx.fillText(fmt(ymin), 4, h - pad);
}

function line(ctx, xs, ys, color, map) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.6;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const [px, py] = map(x, ys[i]);
    i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
  });
  ctx.stroke();
}

// Oblique projection of the unit sphere.
function drawSphere(res) {
  const c = $("sphere");
  const ctx = c.getContext("2d");
  const R = 170, cx = c.width / 2, cy = c.height / 2;
  const tilt = 0.35, turn = 0.6;
  const proj = ([x, y, z]) => {
    const xr = x * Math.cos(turn) - y * Math.sin(turn);
    const yr = x * Math.sin(turn) + y * Math.cos(turn);
    return [cx + R * xr, cy - R * (z * Math.cos(tilt) - yr * Math.sin(tilt))];
  };
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  ctx.arc(cx, cy, R, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.beginPath();
  for (let k = 0; k <= 64; k++) {
    const a = (2 * Math.PI * k) / 64;
    const [px, py] = proj([Math.cos(a), Math.sin(a), 0]);
    k === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
  }
  ctx.stroke();
  const path = (pts, color) => {
    ctx.strokeStyle = color;
    ctx.beginPath();
    pts.forEach((p, i) => {
      const [px, py] = proj(p);
      i === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    });
    ctx.stroke();
  };
  path(res.target, "#e0a040");
  path(res.state, "#2050c0");
  const dot = (p, color) => {
    const [px, py] = proj(p);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(px, py, 5, 0, 2 * Math.PI);
    ctx.fill();
  };
  dot(res.state[0], "#2050c0");
  dot(res.state[res.state.length - 1], "#102870");
  dot(res.target[res.target.length - 1], "#c07000");
  ctx.fillStyle = "#444";
  ctx.fillText("state (blue), target orbit (orange)", 8, c.height - 8);
}

function drawBlochV(res) {
  const c = $("bv");
  const ctx = c.getContext("2d");
  const pad = 40, T = res.t[res.t.length - 1];
  const vmax = Math.max(res.v_max, 1e-12);
  axes(ctx, c.width, c.height, pad, T, 0, vmax, false);
  const map = (t, v) => [pad + ((c.width - pad - 10) * t) / T, 10 + (c.height - pad - 10) * (1 - v / vmax)];
  line(ctx, res.t, res.V, "#2050c0", map);
  ctx.fillStyle = "#444";
  ctx.fillText(`V(t), run class: ${res.class}`, pad + 8, 28);
}

function runBloch() {
  timed("bstatus", () => {
    const res = JSON.parse(
      bloch_trajectory(deg("tth"), deg("tph"), deg("ith"), deg("iph"), Number($("bk").value), Number($("bT").value)),
    );
    drawSphere(res);
    drawBlochV(res);
  });
}

function runClassify() {
  timed("cstatus", () => {
    const res = JSON.parse(critical_points(new Float64Array(list("w")), new Float64Array(list("lv")), new Float64Array(list("cp")), Number($("ck").value)));
    const fmtz = ([re, im]) => `${re.toFixed(4)}${im >= 0 ? "+" : "-"}${Math.abs(im).toFixed(4)}i`;
    const rows = res.points
      .map(
        (p) => `<tr><td>${p.diagonal.map((x) => x.toFixed(3)).join(", ")}</td><td>${p.V.toFixed(4)}</td>` +
          `<td class="${p.stability}">${p.stability}${p.is_target ? " (target)" : ""}</td>` +
          `<td>${p.min_abs_real.toExponential(2)}</td><td>${p.eigenvalues.map(fmtz).join("<br>")}</td></tr>`,
      )
      .join("");
    const k = res.counts;
    $("ctable").innerHTML =
      `<p>${res.ideal ? "ideal" : "non-ideal"} system: ${k.sink} sink, ${k.source} source, ${k.saddle} saddle, ${k.centre} centre</p>` +
      `<table><tr><th>diagonal</th><th>V</th><th>type</th><th>min |Re &lambda;|</th><th>tangent Jacobian eigenvalues</th></tr>${rows}</table>`;
  });
}

function runCompare() {
  timed("lstatus", () => {
    const res = JSON.parse(lyapunov_comparison($("var").value, Number($("lvl").value), Number($("seed").value), Number($("lT").value)));
    const c = $("lplot");
    const ctx = c.getContext("2d");
    const pad = 44, T = res.t[res.t.length - 1];
    const lg = (v) => Math.log10(Math.max(v, 1e-16));
    const all = res.ideal.concat(res.variant).map(lg);
    const ymax = Math.ceil(Math.max(...all)), ymin = Math.floor(Math.min(...all));
    axes(ctx, c.width, c.height, pad, T, ymin, ymax, true);
    const map = (t, v) => [pad + ((c.width - pad - 10) * t) / T, 10 + ((c.height - pad - 10) * (ymax - lg(v))) / (ymax - ymin || 1)];
    line(ctx, res.t, res.ideal, "#0a7a2f", map);
    line(ctx, res.t, res.variant, "#b02020", map);
    ctx.fillStyle = "#444";
    ctx.fillText("log V: ideal (green), variant (red)", pad + 8, 28);
  });
}

await init();
$("brun").onclick = runBloch;
$("crun").onclick = runClassify;
$("lrun").onclick = runCompare;
runBloch();
runClassify();
