import { describe, expect, it } from "vitest";

import { orbitToPose } from "../src/camera";
import { EditController, cuboidWithinDims } from "../src/edit";
import { FrameLoop } from "../src/loop";
import type { Cuboid, RenderedFrame, SceneInfo } from "../src/types";

const INFO: SceneInfo = {
  id: "base",
  dims: [16, 16, 16],
  feature_dim: 32,
  occupied_voxels: 4096,
  active_vertices: 4913,
  voxel_size: 1 / 16,
  origin: [0, 0, 0],
};

const A: Cuboid = { min: [5, 5, 4], max: [7, 7, 6] };
const B: Cuboid = { min: [5, 5, 10], max: [7, 7, 12] };

/** Mock service: swapping is an involution on ids, renders are a pure
 * function of the scene id, so pixel identity tracks id identity. */
function mockService() {
  const swapped = new Map<string, string>([["base", "edited-1"], ["edited-1", "base"]]);
  let fresh = 1;
  const calls: unknown[] = [];
  const pixelsOf = (id: string): ArrayBuffer =>
    new TextEncoder().encode(`png-of-${id}`).buffer as ArrayBuffer;
  return {
    calls,
    pixelsOf,
    async editSwap(scene: string, a: Cuboid, b: Cuboid, k: number, seed: number) {
      calls.push({ op: "swap", scene, a, b, k, seed });
      let out = swapped.get(scene);
      if (out === undefined) {
        out = `edited-${++fresh}`;
        swapped.set(scene, out);
        swapped.set(out, scene);
      }
      return out;
    },
    async editBlend(scenes: string[], placements: [number, number, number][]) {
      calls.push({ op: "blend", scenes, placements });
      return `blend-${scenes.join("+")}`;
    },
    async renderFrame(scene: string, edge: number): Promise<RenderedFrame> {
      return { data: pixelsOf(scene), renderMillis: 5, mlpCalls: 1, width: edge, height: edge };
    },
  };
}

describe("edit controller", () => {
  it("defaults to 12 clusters", () => {
    const svc = mockService();
    const ctl = new EditController(svc, "base", () => undefined);
    expect(ctl.k).toBe(12);
  });

  it("validates cuboids against the grid dims from scene info", () => {
    const svc = mockService();
    const ctl = new EditController(svc, "base", () => undefined);
    expect(cuboidWithinDims(A, INFO.dims)).toBe(true);
    expect(() => ctl.selectCuboid({ min: [0, 0, 0], max: [16, 2, 2] }, INFO)).toThrow();
    ctl.selectCuboid(A, INFO);
    ctl.selectCuboid(B, INFO);
    expect(ctl.selection).toEqual([A, B]);
  });

  it("swap activates the new snapshot and undo reverts the id", async () => {
    const svc = mockService();
    const active: string[] = [];
    const ctl = new EditController(svc, "base", (id) => active.push(id));
    ctl.selectCuboid(A, INFO);
    ctl.selectCuboid(B, INFO);
    const id = await ctl.swap();
    expect(id).toBe("edited-1");
    expect(ctl.currentScene).toBe("edited-1");
    expect(ctl.undo()).toBe("base");
    expect(active).toEqual(["edited-1", "base"]);
    expect(ctl.canUndo).toBe(false);
  });

  it("swap then undo restores pixel-identical frames from the service", async () => {
    const svc = mockService();
    let time = 0;
    const frames: { scene: string; bytes: Uint8Array }[] = [];
    const loop = new FrameLoop({
      transport: (req) => svc.renderFrame(req.scene, req.pose.width),
      now: () => time,
      onFrame: (frame, req) => frames.push({ scene: req.scene, bytes: new Uint8Array(frame.data) }),
      idleMs: 300,
    });
    const ctl = new EditController(svc, "base", (id) => loop.setScene(id));
    const cameraFor = (edge: number) =>
      orbitToPose(
        { target: [0.5, 0.5, 0.5], radius: 2, azimuth: 0.5, elevation: 0.2, fovY: 0.7 },
        edge,
        edge,
      );
    loop.setScene("base");
    loop.setCamera(cameraFor);
    time += 1000; // idle: settled frame of the original scene
    loop.update();
    await new Promise((r) => setTimeout(r));
    ctl.selectCuboid(A, INFO);
    ctl.selectCuboid(B, INFO);
    await ctl.swap();
    time += 1000;
    loop.update();
    await new Promise((r) => setTimeout(r));
    ctl.undo();
    time += 1000;
    loop.update();
    await new Promise((r) => setTimeout(r));

    expect(frames.map((f) => f.scene)).toEqual(["base", "edited-1", "base"]);
    expect(frames[0].bytes).toEqual(frames[2].bytes); // pixel-identical after undo
    expect(frames[1].bytes).not.toEqual(frames[0].bytes);
  });

  it("blend records the placement and switches to the composite id", async () => {
    const svc = mockService();
    const ctl = new EditController(svc, "base", () => undefined);
    const id = await ctl.blend("other", [16, 0, 0]);
    expect(id).toBe("blend-base+other");
    expect(svc.calls[0]).toEqual({
      op: "blend",
      scenes: ["base", "other"],
      placements: [[0, 0, 0], [16, 0, 0]],
    });
    expect(ctl.undo()).toBe("base");
  });

  it("undo with no history throws", () => {
    const svc = mockService();
    const ctl = new EditController(svc, "base", () => undefined);
    expect(() => ctl.undo()).toThrow();
  });
});
