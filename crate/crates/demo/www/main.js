import init, { Demo } from "./pkg/heatnet_demo.js";

const $ = (id) => document.getElementById(id);
const colors = { vehicle: "#1f5fbf", pedestrian_bicycle: "#d2691e" };
const edgeColors = ["#9ab", "#b9a", "#ab9", "#bb9"];

let demo = null;
let scene = null;
let selected = null;

function status(text) {
  $("status").textContent = text;
}

// World-to-canvas transform fitted to the map extent.
function fit(canvas) {
  const half = (scene.map.size * scene.map.meters_per_pixel) / 2;
  const s = canvas.width / (2 * half);
  const [cx, cy] = scene.map.center;
  return ([x, y]) => [(x - cx + half) * s, canvas.height - (y - cy + half) * s];
}

function polyline(ctx, pts, dashed) {
  ctx.setLineDash(dashed ? [4, 4] : []);
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawScene(inspection) {
  const canvas = $("scene");
  const ctx = canvas.getContext("2d");
  const { size, pixels } = scene.map;
  const img = ctx.createImageData(size, size);
  pixels.forEach((p, i) => {
    // raster rows run north to south
    const v = 255 - p * 0.35;
    img.data.set([v, v, v, 255], i * 4);
  });
  const off = new OffscreenCanvas(size, size);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);

  const to = fit(canvas);
  const now = scene.agents.map((a) => to(a.history[a.history.length - 1]));
  const weights = new Map();
  if (inspection) {
    for (const n of inspection.attention) {
      weights.set(n.id, n.weights.reduce((s, w) => s + w, 0) / n.weights.length);
    }
  }
  for (const e of scene.edges) {
    if (e.src === e.dst) continue;
    const focus = inspection && scene.agents[e.dst].id === inspection.id;
    ctx.strokeStyle = focus ? "#c0392b" : edgeColors[e.type];
    ctx.lineWidth = focus ? 1 + 10 * weights.get(scene.agents[e.src].id) : 1;
    polyline(ctx, [now[e.src], now[e.dst]]);
  }
  scene.agents.forEach((a, i) => {
    ctx.strokeStyle = colors[a.type];
    ctx.lineWidth = 2;
    polyline(ctx, a.history.map(to));
    ctx.lineWidth = 1;
    polyline(ctx, a.future.map(to), true);
    ctx.fillStyle = colors[a.type];
    ctx.beginPath();
    ctx.arc(now[i][0], now[i][1], i === selected ? 7 : 5, 0, 2 * Math.PI);
    ctx.fill();
  });
  if (inspection && inspection.predicted_global) {
    ctx.strokeStyle = "#27ae60";
    ctx.lineWidth = 2;
    polyline(ctx, inspection.predicted_global.map(to));
  }
}

function drawFrame(info) {
  const canvas = $("frame");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!info) return;
  const pts = [...info.history_local, ...info.future_local, ...(info.predicted_local || [])];
  const reach = Math.max(5, ...pts.map(([x, y]) => Math.max(Math.abs(x), Math.abs(y)))) * 1.1;
  const s = canvas.width / (2 * reach);
  const to = ([x, y]) => [canvas.width / 2 + x * s, canvas.height / 2 - y * s];
  ctx.strokeStyle = "#ddd";
  polyline(ctx, [to([-reach, 0]), to([reach, 0])]);
  polyline(ctx, [to([0, -reach]), to([0, reach])]);
  ctx.fillStyle = "#666";
  ctx.fillText(`agent ${info.id} frame (+x = heading)`, 8, 14);
  ctx.strokeStyle = "#1f5fbf";
  ctx.lineWidth = 2;
  polyline(ctx, info.history_local.map(to));
  ctx.lineWidth = 1;
  polyline(ctx, info.future_local.map(to), true);
  if (info.predicted_local) {
    ctx.strokeStyle = "#27ae60";
    ctx.lineWidth = 2;
    polyline(ctx, info.predicted_local.map(to));
  }
}

function showAttention(info) {
  const table = $("attention");
  table.innerHTML = "";
  if (!info) return;
  const head = table.insertRow();
  head.innerHTML = "<th>neighbor</th>" + info.attention[0].weights.map((_, k) => `<th>head ${k + 1}</th>`).join("");
  for (const n of info.attention) {
    const row = table.insertRow();
    row.innerHTML = `<td>${n.id === info.id ? "self" : n.id}</td>` + n.weights.map((w) => `<td>${w.toFixed(3)}</td>`).join("");
  }
}

function drawLoss(losses) {
  const canvas = $("loss");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!losses.length) return;
  const logs = losses.map(Math.log10);
  const lo = Math.min(...logs);
  const hi = Math.max(...logs, lo + 1e-9);
  const to = (v, i) => [8 + (i / Math.max(1, logs.length - 1)) * (canvas.width - 16), 8 + ((hi - v) / (hi - lo)) * (canvas.height - 24)];
  ctx.strokeStyle = "#333";
  polyline(ctx, logs.map(to));
  ctx.fillStyle = "#666";
  ctx.fillText(`train loss (log scale), ${losses.length} epochs, last ${losses[losses.length - 1].toFixed(4)}`, 8, canvas.height - 4);
}

function inspect(index) {
  selected = index;
  const info = index === null ? null : JSON.parse(demo.inspect(index));
  drawScene(info);
  drawFrame(info);
  showAttention(info);
}

function generate() {
  try {
    demo = new Demo(
      Number($("seed").value),
      $("pattern").value,
      Number($("vehicles").value),
      Number($("vrus").value),
      Number($("radius").value),
    );
    scene = JSON.parse(demo.scene());
    drawLoss([]);
    inspect(null);
    status(`${scene.scene_id}: ${scene.agents.length} agents, ${scene.edges.length} edges (self-loops included)`);
  } catch (e) {
    status(`error: ${e.message ?? e}`);
  }
}

function train() {
  if (!demo) return;
  status("training…");
  // let the status repaint before the blocking call
  setTimeout(() => {
    const log = JSON.parse(demo.train(10));
    drawLoss(log.losses);
    inspect(selected);
    status(`trained ${log.epochs} epochs`);
  }, 20);
}

$("scene").addEventListener("click", (ev) => {
  if (!scene) return;
  const rect = ev.target.getBoundingClientRect();
  const to = fit($("scene"));
  let best = null;
  let bestDist = 15;
  scene.agents.forEach((a, i) => {
    const [x, y] = to(a.history[a.history.length - 1]);
    const d = Math.hypot(x - (ev.clientX - rect.left), y - (ev.clientY - rect.top));
    if (d < bestDist) {
      best = i;
      bestDist = d;
    }
  });
  inspect(best);
});
$("generate").addEventListener("click", generate);
$("train").addEventListener("click", train);

await init();
generate();
