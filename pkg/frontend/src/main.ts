/** Browser entry point: wires the session state machine, canvas view and
 * API client into the DOM. Keyboard: digits select palette classes, Enter
 * submits, n/p step through pending clusters, Escape clears picks. */

import { ApiClient } from "./api.js";
import {
  fitViewport,
  pan,
  pickPoint,
  renderCluster,
  Viewport,
  zoom,
} from "./canvas.js";
import { ApiError, Submission } from "./model.js";
import { Session } from "./state.js";

const api = new ApiClient("");
const session = new Session();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("scatter");
const ctx = canvas.getContext("2d")!;
const sceneSelect = el<HTMLSelectElement>("scene-select");
const clusterList = el<HTMLUListElement>("cluster-list");
const palette = el<HTMLDivElement>("palette");
const banner = el<HTMLDivElement>("banner");
const progressBox = el<HTMLDivElement>("progress");
const submitButton = el<HTMLButtonElement>("submit");
const clearButton = el<HTMLButtonElement>("clear");
const modeHint = el<HTMLDivElement>("mode-hint");

let view: Viewport = { scale: 10, centerX: 0, centerY: 0, width: canvas.width, height: canvas.height };

function showError(message: string): void {
  banner.textContent = message;
  banner.classList.add("visible", "error");
  setTimeout(() => banner.classList.remove("visible"), 4000);
}

function showInfo(message: string): void {
  banner.textContent = message;
  banner.classList.remove("error");
  banner.classList.add("visible");
  setTimeout(() => banner.classList.remove("visible"), 2500);
}

function redraw(): void {
  const cluster = session.cluster();
  if (!cluster) {
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const pickColors = new Map<number, string>();
  for (const cls of session.scene?.classes ?? []) pickColors.set(cls.id, cls.color);
  renderCluster(ctx, view, cluster, { picked: session.picks, pickColors });
}

function renderClusterList(): void {
  clusterList.replaceChildren();
  for (const cluster of session.scene?.clusters ?? []) {
    const item = document.createElement("li");
    item.textContent = `#${cluster.id} · ${cluster.count} pts · ${cluster.status}`;
    item.dataset.status = cluster.status;
    if (cluster.id === session.activeClusterId) item.classList.add("active");
    item.addEventListener("click", () => {
      session.selectCluster(cluster.id);
      focusActiveCluster();
    });
    clusterList.appendChild(item);
  }
}

function renderPalette(): void {
  palette.replaceChildren();
  (session.scene?.classes ?? []).forEach((cls, i) => {
    const button = document.createElement("button");
    button.textContent = `${i + 1} ${cls.name}`;
    button.style.setProperty("--swatch", cls.color);
    if (cls.id === session.activeClassId) button.classList.add("active");
    if (session.picks.has(cls.id)) button.classList.add("picked");
    button.addEventListener("click", () => {
      session.selectClass(cls.id);
      renderPalette();
      renderHint();
    });
    palette.appendChild(button);
  });
}

function renderHint(): void {
  if (session.picks.size > 0) {
    modeHint.textContent = `mixed: ${session.picks.size} class point(s) picked — need >= 2 classes`;
  } else if (session.activeClassId !== null) {
    modeHint.textContent = "pure: submit labels the whole cluster; or pick points for mixed mode";
  } else {
    modeHint.textContent = "select a class (keys 1-9), then submit (pure) or pick points (mixed)";
  }
}

function focusActiveCluster(): void {
  const cluster = session.cluster();
  if (cluster) {
    view = fitViewport(cluster.bbox, canvas.width, canvas.height);
  }
  renderClusterList();
  renderPalette();
  renderHint();
  redraw();
}

async function loadScene(sceneId: string): Promise<void> {
  try {
    session.loadScene(await api.clusters(sceneId));
    const first = session.nextPendingCluster() ?? session.scene?.clusters[0]?.id ?? null;
    if (first !== null) session.selectCluster(first);
    focusActiveCluster();
  } catch (err) {
    showError(String(err));
  }
}

async function submit(): Promise<void> {
  const built = session.buildSubmission();
  if (typeof built === "string") {
    showError(built);
    return;
  }
  const submission: Submission = built;
  const pending = session.applyOptimistic(submission);
  renderClusterList();
  try {
    const result = await api.submit(session.scene!.sceneId, submission);
    session.confirm(pending!);
    showInfo(
      `cluster ${result.clusterId}: +${result.sparse} sparse, +${result.propagated} propagated, +${result.negative} negative`,
    );
    const next = session.nextPendingCluster();
    if (next !== null) session.selectCluster(next);
    focusActiveCluster();
  } catch (err) {
    session.rollback(pending!);
    renderClusterList();
    renderPalette();
    renderHint();
    redraw();
    if (err instanceof ApiError) {
      showError(`${err.status} ${err.category}: ${err.message}`);
    } else {
      showError(String(err));
    }
  }
}

async function refreshProgress(): Promise<void> {
  try {
    const progress = await api.progress();
    const rates = progress.rates
      .map((r) => `${r.kind} ${(100 * r.rate).toFixed(1)}%`)
      .join(" · ");
    progressBox.textContent = `${progress.annotatedClusters}/${progress.totalClusters} clusters · ${rates}`;
  } catch {
    // polling failure is not fatal; leave the last value in place
  }
}

// canvas interactions: left-drag pans, wheel zooms, click picks a point
let dragging = false;
let lastX = 0;
let lastY = 0;
let moved = false;

canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  moved = false;
  lastX = ev.offsetX;
  lastY = ev.offsetY;
});
canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  const dx = ev.offsetX - lastX;
  const dy = ev.offsetY - lastY;
  if (Math.abs(dx) + Math.abs(dy) > 2) moved = true;
  view = pan(view, dx, dy);
  lastX = ev.offsetX;
  lastY = ev.offsetY;
  redraw();
});
window.addEventListener("mouseup", (ev) => {
  if (!dragging) return;
  dragging = false;
  if (moved) return;
  const cluster = session.cluster();
  if (!cluster) return;
  const rect = canvas.getBoundingClientRect();
  const picked = pickPoint(view, cluster.points, ev.clientX - rect.left, ev.clientY - rect.top);
  if (picked) {
    if (session.activeClassId === null) {
      showError("select a class before picking points");
    } else if (session.pickPoint(picked.index)) {
      renderPalette();
      renderHint();
      redraw();
    }
  }
});
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  view = zoom(view, ev.deltaY < 0 ? 1.15 : 1 / 1.15, ev.offsetX, ev.offsetY);
  redraw();
});

window.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
  const classes = session.scene?.classes ?? [];
  const digit = Number(ev.key);
  if (Number.isInteger(digit) && digit >= 1 && digit <= classes.length) {
    session.selectClass(classes[digit - 1].id);
    renderPalette();
    renderHint();
  } else if (ev.key === "Enter") {
    void submit();
  } else if (ev.key === "Escape") {
    session.clearPicks();
    session.activeClassId = null;
    renderPalette();
    renderHint();
    redraw();
  } else if (ev.key === "n" || ev.key === "p") {
    const next = session.nextPendingCluster(ev.key === "n" ? 1 : -1);
    if (next !== null) {
      session.selectCluster(next);
      focusActiveCluster();
    }
  }
});

submitButton.addEventListener("click", () => void submit());
clearButton.addEventListener("click", () => {
  session.clearPicks();
  renderPalette();
  renderHint();
  redraw();
});
sceneSelect.addEventListener("change", () => void loadScene(sceneSelect.value));

async function start(): Promise<void> {
  try {
    const scenes = await api.scenes();
    sceneSelect.replaceChildren(
      ...scenes.map((sid) => {
        const option = document.createElement("option");
        option.value = sid;
        option.textContent = `scene ${sid}`;
        return option;
      }),
    );
    if (scenes.length) await loadScene(scenes[0]);
    await refreshProgress();
    setInterval(() => void refreshProgress(), 2000);
  } catch (err) {
    showError(`failed to reach the annotation service: ${String(err)}`);
  }
}

void start();
