/** Browser entry point: canvas, orbit controls, quality HUD, edit console. */

import { RenderClient, ServiceError } from "./api";
import { OrbitState, clampOrbit, orbitToPose } from "./camera";
import { EditController } from "./edit";
import { FrameLoop } from "./loop";
import type { Cuboid, SceneInfo } from "./types";

const client = new RenderClient("");
const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hud = document.getElementById("hud")!;
const toastBox = document.getElementById("toasts")!;
const sceneSelect = document.getElementById("scene") as HTMLSelectElement;
const undoButton = document.getElementById("undo") as HTMLButtonElement;
const swapButton = document.getElementById("swap") as HTMLButtonElement;
const blendButton = document.getElementById("blend") as HTMLButtonElement;
const kInput = document.getElementById("clusters") as HTMLInputElement;
const cuboidInputs = [0, 1].map(
  (i) => document.getElementById(`cuboid${i}`) as HTMLInputElement,
);

let info: SceneInfo | null = null;

function toast(message: string): void {
  const el = document.createElement("div");
  el.className = "toast";
  el.textContent = message;
  toastBox.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}

const orbit: OrbitState = {
  target: [0.5, 0.5, 0.5],
  radius: 1.8,
  azimuth: 0.8,
  elevation: 0.35,
  fovY: (40 * Math.PI) / 180,
};

const loop = new FrameLoop({
  transport: async (req) =>
    client.render({
      scene: req.scene,
      pose: req.pose,
      quality: { tau_t: req.tauT, white_background: true },
    }),
  now: () => performance.now(),
  onFrame: (frame) => {
    const blob = new Blob([frame.data], { type: "image/png" });
    createImageBitmap(blob).then((bmp) => {
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(bmp, 0, 0, canvas.width, canvas.height);
      const fps = frame.renderMillis > 0 ? 1000 / frame.renderMillis : 0;
      hud.textContent =
        `${frame.width}x${frame.height}  ${frame.renderMillis.toFixed(1)} ms ` +
        `(${fps.toFixed(1)} fps)  MLP calls ${frame.mlpCalls}`;
    });
  },
  onError: (err) => {
    toast(err instanceof ServiceError ? err.message : String(err));
  },
  ladder: { interactive: 128, settled: 256 },
  idleMs: 300,
});

function pushCamera(): void {
  const st = clampOrbit(orbit);
  orbit.radius = st.radius;
  orbit.elevation = st.elevation;
  loop.setCamera((edge) => orbitToPose(orbit, edge, edge));
}

// -- orbit / pan / zoom ------------------------------------------------------

let dragging: "orbit" | "pan" | null = null;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("mousedown", (e) => {
  dragging = e.button === 2 || e.shiftKey ? "pan" : "orbit";
  lastX = e.clientX;
  lastY = e.clientY;
});
window.addEventListener("mouseup", () => (dragging = null));
window.addEventListener("mousemove", (e) => {
  if (!dragging) return;
  const dx = e.clientX - lastX;
  const dy = e.clientY - lastY;
  lastX = e.clientX;
  lastY = e.clientY;
  if (dragging === "orbit") {
    orbit.azimuth -= dx * 0.01;
    orbit.elevation += dy * 0.01;
  } else {
    const scale = orbit.radius * 0.002;
    orbit.target[0] -= dx * scale * Math.sin(orbit.azimuth);
    orbit.target[1] += dx * scale * Math.cos(orbit.azimuth);
    orbit.target[2] += dy * scale;
  }
  pushCamera();
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  orbit.radius *= Math.exp(e.deltaY * 0.001);
  pushCamera();
});
canvas.addEventListener("contextmenu", (e) => e.preventDefault());

// -- edit console -------------------------------------------------------------

function parseCuboid(text: string): Cuboid {
  const parts = text.split(/[\s,]+/).filter(Boolean).map(Number);
  if (parts.length !== 6 || parts.some((v) => !Number.isInteger(v))) {
    throw new Error("cuboid needs six integers: x0 y0 z0 x1 y1 z1");
  }
  return { min: [parts[0], parts[1], parts[2]], max: [parts[3], parts[4], parts[5]] };
}

let editor: EditController | null = null;

async function selectScene(id: string): Promise<void> {
  info = await client.sceneInfo(id);
  editor = new EditController(client, id, (next) => {
    loop.setScene(next);
    if (![...sceneSelect.options].some((o) => o.value === next)) {
      sceneSelect.add(new Option(next, next));
    }
    sceneSelect.value = next;
    undoButton.disabled = !editor?.canUndo;
  });
  loop.setScene(id);
  const [nx, ny, nz] = info.dims;
  const vs = info.voxel_size;
  orbit.target = [
    info.origin[0] + (nx * vs) / 2,
    info.origin[1] + (ny * vs) / 2,
    info.origin[2] + (nz * vs) / 2,
  ];
  orbit.radius = 1.8 * Math.max(nx, ny, nz) * vs;
  pushCamera();
}

swapButton.addEventListener("click", async () => {
  if (!editor || !info) return;
  try {
    editor.clearSelection();
    editor.k = Number(kInput.value) || 12;
    for (const input of cuboidInputs) editor.selectCuboid(parseCuboid(input.value), info);
    await editor.swap();
    undoButton.disabled = false;
    toast(`swapped -> ${editor.currentScene}`);
  } catch (err) {
    toast(err instanceof ServiceError ? err.message : String(err));
  }
});

blendButton.addEventListener("click", async () => {
  if (!editor || !info) return;
  const other = prompt("blend with scene id:", sceneSelect.value);
  if (!other) return;
  const placementText = prompt("placement (voxel offset x y z):", `${info.dims[0]} 0 0`);
  if (!placementText) return;
  const p = placementText.split(/[\s,]+/).map(Number) as [number, number, number];
  try {
    await editor.blend(other, p);
    undoButton.disabled = false;
    toast(`blended -> ${editor.currentScene}`);
  } catch (err) {
    toast(err instanceof ServiceError ? err.message : String(err));
  }
});

undoButton.addEventListener("click", () => {
  if (!editor) return;
  try {
    editor.undo();
    toast(`back to ${editor.currentScene}`);
  } catch (err) {
    toast(String(err));
  }
  undoButton.disabled = !editor.canUndo;
});

sceneSelect.addEventListener("change", () => {
  selectScene(sceneSelect.value).catch((err) => toast(String(err)));
});

// -- boot ----------------------------------------------------------------------

async function boot(): Promise<void> {
  const scenes = await client.listScenes();
  if (scenes.length === 0) {
    toast("no scenes registered; start the service with --scenes or --demo");
    return;
  }
  for (const id of scenes) sceneSelect.add(new Option(id, id));
  sceneSelect.value = scenes[0];
  await selectScene(scenes[0]);
  const tick = (): void => {
    loop.update();
    requestAnimationFrame(tick);
  };
  tick();
}

boot().catch((err) => toast(String(err)));
