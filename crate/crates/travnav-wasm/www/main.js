import init, { parse, scenario_names, Demo } from "./pkg/travnav_wasm.js";

const SCALE = 5; // canvas pixels per grid cell
const $ = (id) => document.getElementById(id);

let demo = null;
let layout = null;
let state = null;
let timer = null;

function showParse() {
  const rows = JSON.parse(parse($("parse-text").value));
  if (rows.length === 0) {
    $("parse-out").textContent = "no landmarks found";
    return;
  }
  const body = rows
    .map((d) => `<tr><td>${esc(d.label)}</td><td>${d.attribute}</td><td>${esc(d.source_action)}</td></tr>`)
    .join("");
  $("parse-out").innerHTML = `<table><tr><th>label</th><th>attribute</th><th>action</th></tr>${body}</table>`;
}

function esc(s) {
  return s.replace(/[&<>"]/g, (c) => `&#${c.charCodeAt(0)};`);
}

function reset() {
  stop();
  const seed = $("seed").value === "" ? undefined : BigInt($("seed").value);
  demo?.free();
  demo = new Demo($("scenario").value, seed);
  layout = JSON.parse(demo.layout());
  const canvas = $("map");
  canvas.width = layout.width * SCALE;
  canvas.height = layout.height * SCALE;
  state = JSON.parse(demo.state());
  render(`${layout.description || layout.name}. Suggested goal (${layout.goal.join(", ")}).`);
}

function guard(fn) {
  try {
    fn();
  } catch (e) {
    render(String(e), true);
  }
}

function step(n) {
  state = JSON.parse(demo.step(n));
  render();
  if (!demo.running() || state.phase === "Idle") stop();
}

function play() {
  if (timer) return stop();
  $("play").textContent = "Pause";
  timer = setInterval(() => step(1), 50);
}

function stop() {
  clearInterval(timer);
  timer = null;
  $("play").textContent = "Play";
}

// world (x, y) to canvas pixels; y grows upward in the world
function toCanvas(x, y) {
  const r = layout.resolution;
  return [((x - layout.origin[0]) / r) * SCALE, (layout.height - (y - layout.origin[1]) / r) * SCALE];
}

function toWorld(px, py) {
  const r = layout.resolution;
  return [layout.origin[0] + (px / SCALE) * r, layout.origin[1] + (layout.height - py / SCALE) * r];
}

function render(note, isError = false) {
  const ctx = $("map").getContext("2d");
  const grid = demo.grid();
  const img = ctx.createImageData(layout.width, layout.height);
  for (let row = 0; row < layout.height; row++) {
    for (let col = 0; col < layout.width; col++) {
      const v = 255 - grid[row * layout.width + col];
      const o = ((layout.height - 1 - row) * layout.width + col) * 4;
      img.data.set([v, v, v, 255], o);
    }
  }
  const off = new OffscreenCanvas(layout.width, layout.height);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, layout.width * SCALE, layout.height * SCALE);

  for (const s of layout.shapes) {
    ctx.beginPath();
    s.polygon.forEach(([x, y], i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, ...toCanvas(x, y)));
    ctx.closePath();
    ctx.strokeStyle = s.traversable ? "#c80" : "#555";
    ctx.setLineDash(s.traversable ? [4, 3] : []);
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = "#333";
    ctx.fillText(s.label, ...toCanvas(s.polygon[0][0], s.polygon[0][1]));
  }

  for (const p of state.points) {
    ctx.fillStyle = p.traversable ? "#2a7" : "#d33";
    const [px, py] = toCanvas(p.x, p.y);
    ctx.fillRect(px - 1, py - 1, 2, 2);
  }

  if (state.path) {
    ctx.beginPath();
    state.path.forEach(([x, y], i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, ...toCanvas(x, y)));
    ctx.strokeStyle = "#06c";
    ctx.lineWidth = 2;
    ctx.stroke();
    ctx.lineWidth = 1;
  }

  if (state.goal) {
    const [gx, gy] = toCanvas(...state.goal);
    ctx.strokeStyle = "#06c";
    ctx.strokeRect(gx - 5, gy - 5, 10, 10);
  }

  const { x, y, theta } = state.robot;
  const [rx, ry] = toCanvas(x, y);
  ctx.fillStyle = "#f90";
  ctx.beginPath();
  ctx.arc(rx, ry, 6, 0, 2 * Math.PI);
  ctx.fill();
  ctx.beginPath();
  ctx.moveTo(rx, ry);
  ctx.lineTo(rx + 12 * Math.cos(theta), ry - 12 * Math.sin(theta));
  ctx.strokeStyle = "#000";
  ctx.stroke();

  const dirs = state.directives.map((d) => `${d.label}:${d.attribute}`).join(" ") || "none";
  const status = `tick ${state.tick}  phase ${state.phase}  directives ${dirs}`;
  $("status").innerHTML = esc(status) + (note ? `<br><span class="${isError ? "err" : ""}">${esc(note)}</span>` : "");
}

await init();

for (const name of JSON.parse(scenario_names())) {
  $("scenario").add(new Option(name, name));
}
$("parse-btn").onclick = showParse;
$("parse-text").onkeydown = (e) => e.key === "Enter" && showParse();
$("reset").onclick = () => guard(reset);
$("scenario").onchange = () => guard(reset);
$("instruct").onclick = () =>
  guard(() => {
    const got = JSON.parse(demo.instruct($("instruction").value));
    state = JSON.parse(demo.state());
    render(`${got.length} directive(s) active`);
  });
$("step1").onclick = () => guard(() => step(1));
$("step10").onclick = () => guard(() => step(10));
$("play").onclick = () => guard(play);
$("map").onclick = (e) =>
  guard(() => {
    const rect = e.target.getBoundingClientRect();
    const [x, y] = toWorld(e.clientX - rect.left, e.clientY - rect.top);
    state = JSON.parse(demo.set_goal(x, y));
    render(`goal (${x.toFixed(2)}, ${y.toFixed(2)}), replanned`);
  });

showParse();
reset();
