import { describe, expect, it } from "vitest";
import {
  ELEVATION_LIMIT_DEG,
  MIN_RADIUS,
  PoseQuery,
  SceneInfo,
  ViewerState,
  clampState,
  dollyBy,
  orbitBy,
  panBy,
  poseFromState,
  poseKey,
  scaledSize,
  stateFromSceneInfo,
  withScale,
} from "../src/state.js";

function baseState(over: Partial<ViewerState> = {}): ViewerState {
  return {
    center: { x: 0, y: 0, z: 0 },
    radius: 2.5,
    azimuthDeg: 0,
    elevationDeg: 0,
    fovDeg: 45,
    fullWidth: 256,
    fullHeight: 192,
    scale: 1,
    divisor: 8,
    ...over,
  };
}

/** Deterministic uniform rng for property-style sweeps. */
function lcg(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s * 1664525 + 1013904223) >>> 0;
    return s / 2 ** 32;
  };
}

function norm(v: [number, number, number]): number {
  return Math.hypot(v[0], v[1], v[2]);
}

describe("poseFromState", () => {
  it("puts azimuth 0, elevation 0 on the +z axis looking at the center", () => {
    const pose = poseFromState(baseState({ center: { x: 1, y: 2, z: 3 }, radius: 4 }));
    expect(pose.position[0]).toBeCloseTo(1, 12);
    expect(pose.position[1]).toBeCloseTo(2, 12);
    expect(pose.position[2]).toBeCloseTo(3 + 4, 12);
    expect(pose.target).toEqual([1, 2, 3]);
    expect(pose.up).toEqual([0, 1, 0]);
  });

  it("raises the camera toward +y for positive elevation", () => {
    const pose = poseFromState(baseState({ elevationDeg: 30, radius: 2 }));
    expect(pose.position[1]).toBeCloseTo(2 * Math.sin(Math.PI / 6), 12);
    expect(pose.position[2]).toBeCloseTo(2 * Math.cos(Math.PI / 6), 12);
  });

  it("azimuth 90 moves the camera to +x", () => {
    const pose = poseFromState(baseState({ azimuthDeg: 90, radius: 3 }));
    expect(pose.position[0]).toBeCloseTo(3, 12);
    expect(Math.abs(pose.position[2])).toBeLessThan(1e-12);
  });

  it("keeps the camera exactly radius away from the target", () => {
    const rng = lcg(7);
    for (let i = 0; i < 200; i++) {
      const s = baseState({
        center: { x: rng() * 4 - 2, y: rng() * 4 - 2, z: rng() * 4 - 2 },
        radius: 0.5 + rng() * 5,
        azimuthDeg: rng() * 1440 - 720,
        elevationDeg: rng() * 400 - 200,
      });
      const pose = poseFromState(s);
      const d: [number, number, number] = [
        pose.position[0] - pose.target[0],
        pose.position[1] - pose.target[1],
        pose.position[2] - pose.target[2],
      ];
      expect(norm(d)).toBeCloseTo(Math.max(s.radius, MIN_RADIUS), 9);
      expect(norm(d)).toBeGreaterThan(0);
    }
  });

  it("emits sizes that are positive multiples of the divisor at every scale", () => {
    const rng = lcg(11);
    for (let i = 0; i < 200; i++) {
      const divisor = [1, 2, 4, 8][i % 4]!;
      const scale = ([0.25, 0.5, 1] as const)[i % 3]!;
      const s = baseState({
        divisor,
        scale,
        fullWidth: Math.floor(rng() * 300) + 1,
        fullHeight: Math.floor(rng() * 300) + 1,
      });
      const pose = poseFromState(s);
      expect(pose.width % divisor).toBe(0);
      expect(pose.height % divisor).toBe(0);
      expect(pose.width).toBeGreaterThan(0);
      expect(pose.height).toBeGreaterThan(0);
    }
  });

  it("never serializes an out-of-bounds elevation or radius", () => {
    const rng = lcg(23);
    for (let i = 0; i < 500; i++) {
      const s = baseState({
        elevationDeg: rng() * 2000 - 1000,
        radius: rng() * 4 - 2,
      });
      const pose = poseFromState(s);
      const d: [number, number, number] = [
        pose.position[0] - pose.target[0],
        pose.position[1] - pose.target[1],
        pose.position[2] - pose.target[2],
      ];
      const r = norm(d);
      expect(r).toBeGreaterThanOrEqual(MIN_RADIUS * (1 - 1e-12));
      const el = (Math.asin(d[1] / r) * 180) / Math.PI;
      expect(Math.abs(el)).toBeLessThan(ELEVATION_LIMIT_DEG);
      expect(pose.fov_deg).toBeGreaterThan(1);
      expect(pose.fov_deg).toBeLessThan(179);
    }
  });
});

describe("clampState", () => {
  it("clamps elevation strictly inside the limit", () => {
    expect(clampState(baseState({ elevationDeg: 200 })).elevationDeg).toBeLessThan(
      ELEVATION_LIMIT_DEG,
    );
    expect(clampState(baseState({ elevationDeg: -200 })).elevationDeg).toBeGreaterThan(
      -ELEVATION_LIMIT_DEG,
    );
    expect(clampState(baseState({ elevationDeg: 45 })).elevationDeg).toBe(45);
  });

  it("keeps the radius strictly positive", () => {
    expect(clampState(baseState({ radius: 0 })).radius).toBeGreaterThan(0);
    expect(clampState(baseState({ radius: -3 })).radius).toBeGreaterThan(0);
    expect(clampState(baseState({ radius: 2 })).radius).toBe(2);
  });

  it("leaves azimuth unbounded", () => {
    expect(clampState(baseState({ azimuthDeg: 7200 })).azimuthDeg).toBe(7200);
    expect(clampState(baseState({ azimuthDeg: -7200 })).azimuthDeg).toBe(-7200);
  });
});

describe("interaction helpers", () => {
  it("orbitBy tilts but saturates at the elevation bound", () => {
    let s = baseState();
    for (let i = 0; i < 100; i++) s = orbitBy(s, 0, 10);
    expect(s.elevationDeg).toBeLessThan(ELEVATION_LIMIT_DEG);
    expect(s.elevationDeg).toBeGreaterThan(80);
  });

  it("dollyBy scales the radius and never crosses zero", () => {
    let s = baseState({ radius: 2 });
    const nearer = dollyBy(s, -400);
    expect(nearer.radius).toBeLessThan(2);
    for (let i = 0; i < 200; i++) s = dollyBy(s, -1000);
    expect(s.radius).toBeGreaterThan(0);
  });

  it("panBy moves the center but preserves the orbit radius", () => {
    const s = baseState({ radius: 3, azimuthDeg: 40, elevationDeg: 20 });
    const moved = panBy(s, 25, -10);
    expect(moved.center).not.toEqual(s.center);
    expect(moved.radius).toBe(3);
  });

  it("withScale switches the quality and the rendered size follows", () => {
    const s = baseState({ fullWidth: 256, fullHeight: 256 });
    expect(scaledSize(withScale(s, 0.25))).toEqual({ width: 64, height: 64 });
    expect(scaledSize(withScale(s, 0.5))).toEqual({ width: 128, height: 128 });
    expect(scaledSize(withScale(s, 1))).toEqual({ width: 256, height: 256 });
  });
});

describe("stateFromSceneInfo", () => {
  const info: SceneInfo = {
    name: "demo",
    n_sources: 8,
    resolution: [96, 96],
    bounds: { min: [-1, -1, 0], max: [1, 1, 1] },
    orbit: { center: [0, 0, 0.4], radius: 2.6, elevation_deg: 33 },
    fov_deg: 45,
    divisor: 8,
  };

  it("seeds the orbit from the scene's source-camera geometry", () => {
    const s = stateFromSceneInfo(info);
    expect(s.center).toEqual({ x: 0, y: 0, z: 0.4 });
    expect(s.radius).toBe(2.6);
    expect(s.elevationDeg).toBe(33);
    expect(s.fovDeg).toBe(45);
    expect(s.fullWidth).toBe(96);
    expect(s.fullHeight).toBe(96);
    expect(s.divisor).toBe(8);
    expect(s.scale).toBe(1);
  });
});

describe("poseKey", () => {
  it("is stable for equal poses and distinct for different ones", () => {
    const a: PoseQuery = poseFromState(baseState());
    const b: PoseQuery = poseFromState(baseState());
    const c: PoseQuery = poseFromState(baseState({ azimuthDeg: 1 }));
    expect(poseKey(a)).toBe(poseKey(b));
    expect(poseKey(a)).not.toBe(poseKey(c));
  });
});
