/**
 * Orbit-camera state for the viewer and its mapping to render-service
 * pose queries.
 *
 * The state is a plain serializable object so tests can construct and
 * compare it structurally.  All mutation helpers return new objects and
 * re-establish the invariants:
 *
 *   - elevation stays strictly inside (-ELEVATION_LIMIT_DEG, +ELEVATION_LIMIT_DEG)
 *   - radius stays >= MIN_RADIUS (strictly positive)
 *   - render width/height are positive multiples of the service divisor
 *
 * Convention: the viewer orbits in a y-up frame.  Azimuth 0 / elevation 0
 * places the camera on the +z axis looking back at the orbit center, and
 * positive elevation raises the camera toward +y.  The render service is
 * agnostic to the world handedness; it only sees position/target/up.
 */

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

/** Downscale factors offered by the quality selector. */
export type QualityScale = 0.25 | 0.5 | 1;

export interface ViewerState {
  /** Orbit target in world coordinates. */
  center: Vec3;
  /** Camera distance from the center, > 0. */
  radius: number;
  /** Rotation around the vertical axis, degrees, unbounded. */
  azimuthDeg: number;
  /** Height angle, degrees, strictly inside +-ELEVATION_LIMIT_DEG. */
  elevationDeg: number;
  /** Vertical field of view, degrees, inside (1, 179). */
  fovDeg: number;
  /** Full-quality render size in pixels (multiples of `divisor`). */
  fullWidth: number;
  fullHeight: number;
  /** Current quality selector value. */
  scale: QualityScale;
  /** Render-size granularity required by the service. */
  divisor: number;
}

/** Pose query payload accepted by POST /render. */
export interface PoseQuery {
  position: [number, number, number];
  target: [number, number, number];
  up: [number, number, number];
  fov_deg: number;
  width: number;
  height: number;
}

/** Subset of GET /scene-info used to seed the initial state. */
export interface SceneInfo {
  name: string;
  n_sources: number;
  resolution: [number, number];
  bounds: { min: [number, number, number]; max: [number, number, number] };
  orbit: {
    center: [number, number, number];
    radius: number;
    elevation_deg: number;
  };
  fov_deg: number;
  divisor: number;
}

/** Hard clamp for elevation; the open interval bound is 89 degrees and the
 * clamp stops a small margin inside it so the pose never degenerates. */
export const ELEVATION_LIMIT_DEG = 89;
const ELEVATION_CLAMP_DEG = ELEVATION_LIMIT_DEG - 1e-3;

/** Smallest allowed orbit radius; keeps position distinct from target. */
export const MIN_RADIUS = 1e-3;

export const FOV_MIN_DEG = 1;
export const FOV_MAX_DEG = 179;

const DEG = Math.PI / 180;

function clampNumber(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

/** Return a copy of `s` with every invariant re-established. */
export function clampState(s: ViewerState): ViewerState {
  const divisor = Math.max(1, Math.round(s.divisor));
  return {
    ...s,
    radius: Math.max(MIN_RADIUS, s.radius),
    elevationDeg: clampNumber(s.elevationDeg, -ELEVATION_CLAMP_DEG, ELEVATION_CLAMP_DEG),
    fovDeg: clampNumber(s.fovDeg, FOV_MIN_DEG + 1e-3, FOV_MAX_DEG - 1e-3),
    fullWidth: snapSize(s.fullWidth, divisor),
    fullHeight: snapSize(s.fullHeight, divisor),
    divisor,
  };
}

/** Largest multiple of `divisor` that is <= px, but at least one tile. */
function snapSize(px: number, divisor: number): number {
  return Math.max(divisor, Math.floor(px / divisor) * divisor);
}

/** Render size after applying the quality scale, snapped to the divisor. */
export function scaledSize(s: ViewerState): { width: number; height: number } {
  return {
    width: snapSize(s.fullWidth * s.scale, s.divisor),
    height: snapSize(s.fullHeight * s.scale, s.divisor),
  };
}

/**
 * Camera pose for the current orbit state.
 *
 * position = center + radius * (cos(el) sin(az), sin(el), cos(el) cos(az))
 * so azimuth 0 / elevation 0 puts the camera at center + (0, 0, radius),
 * and the camera always looks at the center with a +y up hint.
 */
export function poseFromState(state: ViewerState): PoseQuery {
  const s = clampState(state);
  const az = s.azimuthDeg * DEG;
  const el = s.elevationDeg * DEG;
  const { width, height } = scaledSize(s);
  return {
    position: [
      s.center.x + s.radius * Math.cos(el) * Math.sin(az),
      s.center.y + s.radius * Math.sin(el),
      s.center.z + s.radius * Math.cos(el) * Math.cos(az),
    ],
    target: [s.center.x, s.center.y, s.center.z],
    up: [0, 1, 0],
    fov_deg: s.fovDeg,
    width,
    height,
  };
}

/** Initial viewer state derived from the scene's /scene-info response. */
export function stateFromSceneInfo(info: SceneInfo): ViewerState {
  const [w, h] = info.resolution;
  return clampState({
    center: {
      x: info.orbit.center[0],
      y: info.orbit.center[1],
      z: info.orbit.center[2],
    },
    radius: info.orbit.radius,
    azimuthDeg: 0,
    elevationDeg: info.orbit.elevation_deg,
    fovDeg: info.fov_deg,
    fullWidth: w,
    fullHeight: h,
    scale: 1,
    divisor: info.divisor,
  });
}

/** Orbit by a pointer delta (pixels); dx spins, dy tilts. */
export function orbitBy(s: ViewerState, dxPx: number, dyPx: number): ViewerState {
  const degPerPx = 0.4;
  return clampState({
    ...s,
    azimuthDeg: s.azimuthDeg - dxPx * degPerPx,
    elevationDeg: s.elevationDeg + dyPx * degPerPx,
  });
}

/** Dolly by a wheel delta; positive delta moves away from the center. */
export function dollyBy(s: ViewerState, delta: number): ViewerState {
  return clampState({ ...s, radius: s.radius * Math.exp(delta * 1e-3) });
}

/** Pan the orbit center in the camera's image plane. */
export function panBy(s: ViewerState, dxPx: number, dyPx: number): ViewerState {
  const az = s.azimuthDeg * DEG;
  const el = s.elevationDeg * DEG;
  // camera right and up vectors for the y-up orbit parameterization
  const right = { x: Math.cos(az), y: 0, z: -Math.sin(az) };
  const up = {
    x: -Math.sin(el) * Math.sin(az),
    y: Math.cos(el),
    z: -Math.sin(el) * Math.cos(az),
  };
  const unitsPerPx = (2 * s.radius * Math.tan((s.fovDeg * DEG) / 2)) / s.fullHeight;
  const dx = -dxPx * unitsPerPx;
  const dy = dyPx * unitsPerPx;
  return clampState({
    ...s,
    center: {
      x: s.center.x + right.x * dx + up.x * dy,
      y: s.center.y + right.y * dx + up.y * dy,
      z: s.center.z + right.z * dx + up.z * dy,
    },
  });
}

/** Change the quality selector. */
export function withScale(s: ViewerState, scale: QualityScale): ViewerState {
  return clampState({ ...s, scale });
}

/** Stable key for pose identity; used to skip duplicate render requests. */
export function poseKey(p: PoseQuery): string {
  return JSON.stringify(p);
}
