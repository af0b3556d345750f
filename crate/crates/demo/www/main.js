import init, { renderMixture, renderComponents, samplePixel, fitPixel, huberLoss } from "./pkg/skewmix_demo.js";

const COLORS = ["#d62728", "#2ca02c", "#1f77b4"];
const $ = (id) => document.getElementById(id);
let target = null;
let seed = 1;

function bands() {
  return Math.max(8, Math.min(256, parseInt($("bands").value, 10) || 64));
}

function k() {
  return parseInt($("k").value, 10);
}

function ranges(c) {
  return { mu: [0, c, 0.1], sigma: [0.01 * c, 0.5 * c, 0.05], alpha: [-8, 8, 0.1], s: [-3, 3, 0.01] };
}

function buildSliders(values) {
  const c = bands();
  const r = ranges(c);
  const box = $("sliders");
  box.innerHTML = "";
  for (let i = 0; i < k(); i++) {
    const fs = document.createElement("fieldset");
    fs.innerHTML = `<legend style="color:${COLORS[i]}">component ${i + 1}</legend>`;
    ["mu", "sigma", "alpha", "s"].forEach((name, j) => {
      const [lo, hi, step] = r[name];
      const v = values ? values[4 * i + j] : [c * (i + 0.5) / k(), 0.08 * c, 0, 0.6][j];
      const label = document.createElement("label");
      label.innerHTML = `<span>${{ mu: "μ", sigma: "σ", alpha: "α", s: "s" }[name]}</span>` +
        `<input type="range" min="${lo}" max="${hi}" step="${step}" value="${v}" data-i="${4 * i + j}">` +
        `<output>${v.toFixed(2)}</output>`;
      label.querySelector("input").addEventListener("input", (e) => {
        label.querySelector("output").textContent = parseFloat(e.target.value).toFixed(2);
        draw();
      });
      fs.appendChild(label);
    });
    box.appendChild(fs);
  }
}

function params() {
  const p = new Float64Array(4 * k());
  document.querySelectorAll("#sliders input").forEach((el) => (p[+el.dataset.i] = parseFloat(el.value)));
  return p;
}

function draw() {
  const c = bands();
  const p = params();
  const mix = renderMixture(c, p);
  const comps = renderComponents(c, p);
  const curves = [...Array(k()).keys()].map((i) => comps.slice(i * c, (i + 1) * c));
  const all = [...mix, ...comps, ...(target ?? [])];
  const lo = Math.min(0, ...all);
  const hi = Math.max(1e-9, ...all);

  const cv = $("plot");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const x = (b) => 40 + (b / (c - 1)) * (cv.width - 60);
  const y = (v) => cv.height - 30 - ((v - lo) / (hi - lo)) * (cv.height - 50);
  g.strokeStyle = "#999";
  g.beginPath();
  g.moveTo(x(0), y(0));
  g.lineTo(x(c - 1), y(0));
  g.stroke();
  const line = (vals, color, width, dash = []) => {
    g.strokeStyle = color;
    g.lineWidth = width;
    g.setLineDash(dash);
    g.beginPath();
    vals.forEach((v, b) => (b ? g.lineTo(x(b), y(v)) : g.moveTo(x(b), y(v))));
    g.stroke();
    g.setLineDash([]);
  };
  curves.forEach((cur, i) => line(cur, COLORS[i], 1.5, [6, 4]));
  if (target) {
    g.fillStyle = "#444";
    target.forEach((v, b) => g.fillRect(x(b) - 2, y(v) - 2, 4, 4));
    $("status").textContent = `Huber loss vs pixel: ${huberLoss(mix, target).toExponential(3)}`;
  }
  line(mix, "#000", 2.5);
}

function resetTarget() {
  target = null;
  $("fit").disabled = true;
  $("status").textContent = "";
}

await init();
buildSliders();
draw();

$("bands").addEventListener("change", () => { resetTarget(); buildSliders(); draw(); });
$("k").addEventListener("change", () => { buildSliders(); draw(); });
$("sample").addEventListener("click", () => {
  const c = bands();
  const out = samplePixel(seed++, c, k(), parseFloat($("noise").value) || 0);
  target = out.slice(0, c);
  $("fit").disabled = false;
  draw();
});
$("fit").addEventListener("click", () => {
  const out = fitPixel(target, k(), 3000, 0.05);
  buildSliders(out.slice(0, 4 * k()));
  draw();
});
