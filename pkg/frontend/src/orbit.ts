/**
 * Orbit camera: spherical coordinates around a target point, converted to the
 * service's camera JSON (world->camera rotation with +z forward, v down).
 * Azimuth 0 / elevation 0 places the camera on the +z axis looking at the
 * target with world +y up.
 */
import type { CameraJson } from './api'

export interface OrbitState {
  azimuthDeg: number
  elevationDeg: number
  radius: number
  target: [number, number, number]
}

export const ELEVATION_LIMIT_DEG = 89

type Vec3 = [number, number, number]

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
const cross = (a: Vec3, b: Vec3): Vec3 => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0]
]
const norm = (a: Vec3): number => Math.hypot(a[0], a[1], a[2])
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s]
const normalize = (a: Vec3): Vec3 => scale(a, 1 / norm(a))
const dot = (a: Vec3, b: Vec3): number => a[0] * b[0] + a[1] * b[1] + a[2] * b[2]

export function clampElevation(deg: number): number {
  return Math.min(ELEVATION_LIMIT_DEG, Math.max(-ELEVATION_LIMIT_DEG, deg))
}

export function orbitPosition(state: OrbitState): Vec3 {
  const az = (state.azimuthDeg * Math.PI) / 180
  const el = (clampElevation(state.elevationDeg) * Math.PI) / 180
  return [
    state.target[0] + state.radius * Math.cos(el) * Math.sin(az),
    state.target[1] + state.radius * Math.sin(el),
    state.target[2] + state.radius * Math.cos(el) * Math.cos(az)
  ]
}

export function orbitToCamera(state: OrbitState, focal: number, size: number): CameraJson {
  const position = orbitPosition(state)
  const forward = normalize(sub(state.target, position))
  const up: Vec3 = [0, 1, 0]
  const right = normalize(cross(forward, up))
  const down = cross(forward, right)
  const rotation = [...right, ...down, ...forward]
  const t: Vec3 = [
    -dot(right, position),
    -dot(down, position),
    -dot(forward, position)
  ]
  return {
    fx: focal,
    fy: focal,
    cx: (size - 1) / 2,
    cy: (size - 1) / 2,
    r: rotation,
    t: [...t],
    w: size,
    h: size
  }
}

/** Screen-space (u, v, depth) of a world point; used by projective checks. */
export function projectThrough(camera: CameraJson, p: Vec3): [number, number, number] {
  const r = camera.r
  const xc = r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + camera.t[0]
  const yc = r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + camera.t[1]
  const zc = r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + camera.t[2]
  return [(camera.fx * xc) / zc + camera.cx, (camera.fy * yc) / zc + camera.cy, zc]
}
