/**
 * Viewer state and its translation into render requests. The state is the
 * single source of truth for the panel; every mutation composes a fresh
 * request so the scheduler can always render "whatever the panel shows now".
 */
import type { LightingJson, RenderRequest } from './api'
import { clampElevation, orbitToCamera, type OrbitState } from './orbit'

export type Mode = 'original' | 'directional' | 'point' | 'sh'

export interface LightingState {
  mode: Mode
  flash: boolean
  direction: [number, number, number] // unit; shared by directional and point
  ambient: number
  color: [number, number, number]
  pointDistance: number
  shCoefficients: number[] | null
}

export interface ViewerState {
  orbit: OrbitState
  lighting: LightingState
  resolution: number
  focal: number
}

export function defaultState(): ViewerState {
  return {
    orbit: { azimuthDeg: 0, elevationDeg: 0, radius: 4, target: [0, 0, 0] },
    lighting: {
      mode: 'original',
      flash: false,
      direction: [0, 0, -1],
      ambient: 0.5,
      color: [1, 1, 1],
      pointDistance: 3,
      shCoefficients: null
    },
    resolution: 256,
    focal: 360
  }
}

export class MissingShFileError extends Error {
  constructor() {
    super('load an SH coefficient file first')
  }
}

export function lightingJson(l: LightingState): LightingJson {
  switch (l.mode) {
    case 'original':
      return { mode: 'original', flash: l.flash }
    case 'directional':
      return {
        mode: 'directional',
        direction: [...l.direction],
        ambient: l.ambient,
        color: [...l.color]
      }
    case 'point':
      return {
        mode: 'point',
        direction: [...l.direction],
        distance: l.pointDistance,
        color: [...l.color]
      }
    case 'sh': {
      if (l.shCoefficients === null) throw new MissingShFileError()
      // passed through as uploaded; the server is the validator and its
      // message is surfaced verbatim on rejection
      return { mode: 'sh', coefficients: [...l.shCoefficients] }
    }
  }
}

export function composeRequest(state: ViewerState): RenderRequest {
  const orbit = { ...state.orbit, elevationDeg: clampElevation(state.orbit.elevationDeg) }
  return {
    camera: orbitToCamera(orbit, state.focal, state.resolution),
    lighting: lightingJson(state.lighting),
    output: 'png'
  }
}

/** Parse an uploaded SH file: a JSON array or {"coefficients": [...]}. */
export function parseShUpload(text: string): number[] {
  const parsed = JSON.parse(text) as unknown
  const arr = Array.isArray(parsed)
    ? parsed
    : (parsed as { coefficients?: unknown }).coefficients
  if (!Array.isArray(arr) || !arr.every((v) => typeof v === 'number' && Number.isFinite(v))) {
    throw new Error('SH file must hold a JSON array of numbers')
  }
  return arr as number[]
}

/**
 * Map a drag position on the light trackball (unit square) to a unit vector.
 * Points inside the disk pick the front hemisphere (toward -z, the frontal
 * head view axis); outside the disk clamps to the rim.
 */
export function trackballDirection(u: number, v: number): [number, number, number] {
  let x = 2 * u - 1
  let y = 1 - 2 * v
  const d2 = x * x + y * y
  if (d2 > 1) {
    const d = Math.sqrt(d2)
    x /= d
    y /= d
    return [x, y, 0]
  }
  return [x, y, -Math.sqrt(1 - d2)]
}
