/** Orbit camera and its conversion to the service's pose representation.
 *
 * World is z-up. The camera sits on a sphere around the target:
 *   eye = target + radius * [cos(az)cos(el), sin(az)cos(el), sin(el)]
 * and looks at the target with the service convention x right, y down,
 * z forward. The rotation is sent as a unit quaternion (w, x, y, z).
 */

import type { PoseJson } from "./types";

export type Vec3 = [number, number, number];
export type Mat3 = [Vec3, Vec3, Vec3]; // rows

const EL_LIMIT = Math.PI / 2 - 1e-4;

export interface OrbitState {
  target: Vec3;
  radius: number;
  azimuth: number;
  elevation: number; // in (-pi/2, pi/2)
  fovY: number; // radians
}

export function clampOrbit(s: OrbitState): OrbitState {
  return {
    ...s,
    radius: Math.max(s.radius, 1e-6),
    elevation: Math.min(Math.max(s.elevation, -EL_LIMIT), EL_LIMIT),
  };
}

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const cross = (a: Vec3, b: Vec3): Vec3 => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0],
];
const norm = (a: Vec3): number => Math.hypot(a[0], a[1], a[2]);
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];
const normalize = (a: Vec3): Vec3 => scale(a, 1 / norm(a));

export function orbitEye(s: OrbitState): Vec3 {
  const ce = Math.cos(s.elevation);
  return [
    s.target[0] + s.radius * Math.cos(s.azimuth) * ce,
    s.target[1] + s.radius * Math.sin(s.azimuth) * ce,
    s.target[2] + s.radius * Math.sin(s.elevation),
  ];
}

/** Camera-to-world rotation; columns are the camera axes (right, down, forward). */
export function orbitRotation(s: OrbitState): Mat3 {
  const eye = orbitEye(s);
  const fwd = normalize(sub(s.target, eye));
  let up: Vec3 = [0, 0, 1];
  let right = cross(fwd, up);
  if (norm(right) < 1e-9) {
    up = [0, 1, 0];
    right = cross(fwd, up);
  }
  right = normalize(right);
  const down = cross(fwd, right);
  // rows of the matrix are world axes expressed per column vector
  return [
    [right[0], down[0], fwd[0]],
    [right[1], down[1], fwd[1]],
    [right[2], down[2], fwd[2]],
  ];
}

export function matMulT(a: Mat3, b: Mat3): Mat3 {
  // a * b^T, used by tests to verify orthonormality
  const out: number[][] = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++)
      for (let k = 0; k < 3; k++) out[i][j] += a[i][k] * b[j][k];
  return out as Mat3;
}

/** Rotation matrix to unit quaternion (w, x, y, z); Shepperd's method. */
export function matrixToQuaternion(m: Mat3): [number, number, number, number] {
  const tr = m[0][0] + m[1][1] + m[2][2];
  let w: number, x: number, y: number, z: number;
  if (tr > 0) {
    const s = Math.sqrt(tr + 1) * 2;
    w = s / 4;
    x = (m[2][1] - m[1][2]) / s;
    y = (m[0][2] - m[2][0]) / s;
    z = (m[1][0] - m[0][1]) / s;
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    const s = Math.sqrt(1 + m[0][0] - m[1][1] - m[2][2]) * 2;
    w = (m[2][1] - m[1][2]) / s;
    x = s / 4;
    y = (m[0][1] + m[1][0]) / s;
    z = (m[0][2] + m[2][0]) / s;
  } else if (m[1][1] > m[2][2]) {
    const s = Math.sqrt(1 + m[1][1] - m[0][0] - m[2][2]) * 2;
    w = (m[0][2] - m[2][0]) / s;
    x = (m[0][1] + m[1][0]) / s;
    y = s / 4;
    z = (m[1][2] + m[2][1]) / s;
  } else {
    const s = Math.sqrt(1 + m[2][2] - m[0][0] - m[1][1]) * 2;
    w = (m[1][0] - m[0][1]) / s;
    x = (m[0][2] + m[2][0]) / s;
    y = (m[1][2] + m[2][1]) / s;
    z = s / 4;
  }
  const n = Math.hypot(w, x, y, z);
  return [w / n, x / n, y / n, z / n];
}

/** Quaternion (w,x,y,z) back to a rotation matrix; used by round-trip tests. */
export function quaternionToMatrix(q: [number, number, number, number]): Mat3 {
  const [w, x, y, z] = q;
  return [
    [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
    [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
    [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
  ];
}

/** Full pose for a frame request at the given pixel resolution. */
export function orbitToPose(s: OrbitState, width: number, height: number): PoseJson {
  const st = clampOrbit(s);
  const eye = orbitEye(st);
  const q = matrixToQuaternion(orbitRotation(st));
  const fy = height / 2 / Math.tan(st.fovY / 2);
  return {
    position: eye,
    quaternion_wxyz: q,
    fx: fy, // square pixels
    fy,
    cx: width / 2,
    cy: height / 2,
    width,
    height,
  };
}
