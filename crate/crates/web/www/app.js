import init, { topologySummary, controlHeatmap, varianceProfile } from "../pkg/sparsecascade_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function request() {
  const family = $("family").value;
  const req = { family, n: num("n"), skip: $("skip").checked };
  const depth = num("depth"), a = num("a"), b = num("b");
  switch (family) {
    case "butterfly":
    case "hypercube": req.depth = depth; break;
    case "clos": req.r = a; req.mid = b; break;
    case "torus": req.rows = a; req.cols = b; req.depth = depth; break;
    case "low_rank": req.k = a; break;
    case "parallel_butterfly": req.depth = depth; req.p = a; break;
    case "random": req.depth = depth; req.density = num("density"); break;
  }
  return JSON.stringify(req);
}

function fail(el, err) {
  el.textContent = String(err);
  el.className = "stats error";
}

function drawTopology() {
  const stats = $("topo-stats");
  let s;
  try {
    s = JSON.parse(topologySummary(request()));
  } catch (e) {
    return fail(stats, e);
  }
  stats.className = "stats";
  stats.textContent = `${s.name}  edges=${s.edges} trainable=${s.trainable} constant=${s.constant} connectivity=${s.connectivity.toFixed(3)}`;

  const cv = $("topo"), ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const pad = 20, cols = s.widths.length;
  const x = (l) => pad + (l * (cv.width - 2 * pad)) / Math.max(cols - 1, 1);
  const y = (l, i) => pad + ((i + 0.5) * (cv.height - 2 * pad)) / s.widths[l];
  ctx.lineWidth = 0.6;
  for (const [l, src, dst, trainable] of s.edge_list) {
    ctx.strokeStyle = trainable ? "rgba(30, 90, 200, 0.55)" : "rgba(200, 80, 30, 0.8)";
    ctx.beginPath();
    ctx.moveTo(x(l), y(l, src));
    ctx.lineTo(x(l + 1), y(l + 1, dst));
    ctx.stroke();
  }
  ctx.fillStyle = "#222";
  s.widths.forEach((w, l) => {
    for (let i = 0; i < w; i++) {
      ctx.beginPath();
      ctx.arc(x(l), y(l, i), 2.2, 0, 2 * Math.PI);
      ctx.fill();
    }
  });
}

function drawHeatmap() {
  const stats = $("k-stats");
  stats.className = "stats";
  stats.textContent = "training…";
  // let the status paint before the synchronous wasm call
  setTimeout(() => {
    let h;
    try {
      h = JSON.parse(controlHeatmap(request(), num("iters")));
    } catch (e) {
      return fail(stats, e);
    }
    stats.textContent = `K is ${h.rows}x${h.cols}  mean=${h.mean.toFixed(4)} variance=${h.variance.toExponential(3)}`;
    const cv = $("heat"), ctx = cv.getContext("2d");
    ctx.clearRect(0, 0, cv.width, cv.height);
    const max = Math.max(...h.values, 1e-12);
    const cw = cv.width / h.cols, ch = cv.height / h.rows;
    h.values.forEach((v, idx) => {
      const r = Math.floor(idx / h.cols), c = idx % h.cols;
      const t = v / max;
      ctx.fillStyle = `rgb(${Math.round(255 * t)}, ${Math.round(80 + 120 * t)}, ${Math.round(255 * (1 - t))})`;
      ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
    });
  }, 10);
}

function drawVariance() {
  let p;
  try {
    p = JSON.parse(varianceProfile(num("vwidth"), num("vdepth"), num("vdensity"), 1));
  } catch (e) {
    return alert(e);
  }
  const cv = $("var"), ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const pad = 40, lo = -12, hi = 2;
  const x = (l) => pad + (l * (cv.width - 2 * pad)) / (p.sparse.length - 1);
  const y = (v) => {
    const e = Math.min(hi, Math.max(lo, Math.log10(Math.max(v, 1e-300))));
    return pad + ((hi - e) * (cv.height - 2 * pad)) / (hi - lo);
  };
  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#666";
  for (let e = lo; e <= hi; e += 2) {
    ctx.beginPath();
    ctx.moveTo(pad, y(10 ** e));
    ctx.lineTo(cv.width - pad, y(10 ** e));
    ctx.stroke();
    ctx.fillText(`1e${e}`, 4, y(10 ** e) + 4);
  }
  for (const [series, color] of [[p.sparse, "#1e5ac8"], [p.plain, "#c8501e"]]) {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    series.forEach((v, l) => (l ? ctx.lineTo(x(l), y(v)) : ctx.moveTo(x(l), y(v))));
    ctx.stroke();
  }
  ctx.fillStyle = "#1e5ac8";
  ctx.fillText("sparse Xavier", cv.width - 140, 20);
  ctx.fillStyle = "#c8501e";
  ctx.fillText("plain Xavier", cv.width - 140, 34);
}

await init();
$("draw").onclick = drawTopology;
$("control").onclick = drawHeatmap;
$("variance").onclick = drawVariance;
drawTopology();
drawVariance();
