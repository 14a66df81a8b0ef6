export interface PoseJson {
  position: [number, number, number];
  quaternion_wxyz: [number, number, number, number];
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface RenderRequest {
  scene: string;
  pose: PoseJson;
  quality: { tau_t: number; white_background?: boolean };
}

export interface RenderedFrame {
  /** Encoded PNG bytes. */
  data: ArrayBuffer;
  renderMillis: number;
  mlpCalls: number;
  width: number;
  height: number;
}

export interface SceneInfo {
  id: string;
  dims: [number, number, number];
  feature_dim: number;
  occupied_voxels: number;
  active_vertices: number;
  voxel_size: number;
  origin: [number, number, number];
}

export interface Cuboid {
  min: [number, number, number];
  max: [number, number, number];
}
