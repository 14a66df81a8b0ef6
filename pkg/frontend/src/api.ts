/** Thin typed client for the render service. */

import type { Cuboid, RenderRequest, RenderedFrame, SceneInfo } from "./types";

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function errorOf(resp: Response): Promise<ServiceError> {
  let message = `${resp.status}`;
  try {
    const body = await resp.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    /* non-JSON error body */
  }
  return new ServiceError(resp.status, message);
}

export class RenderClient {
  constructor(private base: string = "") {}

  async render(req: RenderRequest): Promise<RenderedFrame> {
    const resp = await fetch(`${this.base}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!resp.ok) throw await errorOf(resp);
    return {
      data: await resp.arrayBuffer(),
      renderMillis: Number(resp.headers.get("X-Render-Millis") ?? "0"),
      mlpCalls: Number(resp.headers.get("X-MLP-Calls") ?? "0"),
      width: req.pose.width,
      height: req.pose.height,
    };
  }

  async sceneInfo(id: string): Promise<SceneInfo> {
    const resp = await fetch(`${this.base}/scene/${encodeURIComponent(id)}/info`);
    if (!resp.ok) throw await errorOf(resp);
    return (await resp.json()) as SceneInfo;
  }

  async listScenes(): Promise<string[]> {
    const resp = await fetch(`${this.base}/scenes`);
    if (!resp.ok) throw await errorOf(resp);
    return ((await resp.json()) as { scenes: string[] }).scenes;
  }

  async editSwap(scene: string, a: Cuboid, b: Cuboid, k: number, seed: number): Promise<string> {
    const resp = await fetch(`${this.base}/edit/swap`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ scene, cuboid_a: a, cuboid_b: b, k, seed }),
    });
    if (!resp.ok) throw await errorOf(resp);
    return ((await resp.json()) as { scene: string }).scene;
  }

  async editBlend(scenes: string[], placements: [number, number, number][]): Promise<string> {
    const resp = await fetch(`${this.base}/edit/blend`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ scenes, placements }),
    });
    if (!resp.ok) throw await errorOf(resp);
    return ((await resp.json()) as { scene: string }).scene;
  }
}
