/**
 * Headless viewer session: state mutations in, scheduled renders and toasts
 * out. The DOM layer (main.ts) is a thin shell over this, which is what the
 * scripted contract tests drive.
 */
import { FrameServiceClient, ServerError, type RenderRequest } from './api'
import { RenderScheduler } from './scheduler'
import {
  MissingShFileError,
  composeRequest,
  defaultState,
  parseShUpload,
  type Mode,
  type ViewerState
} from './state'
import { clampElevation } from './orbit'

export interface SessionHooks {
  onFrame: (frame: Blob, request: RenderRequest) => void
  onToast: (message: string) => void
  debounceMs?: number
}

export class ViewerSession {
  readonly state: ViewerState = defaultState()
  private readonly scheduler: RenderScheduler<RenderRequest>

  constructor(
    private readonly client: FrameServiceClient,
    private readonly hooks: SessionHooks
  ) {
    this.scheduler = new RenderScheduler<RenderRequest>({
      send: (request, signal) => this.client.render(request, signal),
      onFrame: hooks.onFrame,
      onError: (error) => hooks.onToast(error.message),
      debounceMs: hooks.debounceMs
    })
  }

  /** Compose a request for the current state and queue it (latest wins). */
  refresh(): void {
    let request: RenderRequest
    try {
      request = composeRequest(this.state)
    } catch (error) {
      if (error instanceof MissingShFileError) {
        this.hooks.onToast(error.message)
        return
      }
      throw error
    }
    this.scheduler.submit(request)
  }

  idle(): Promise<void> {
    return this.scheduler.idle()
  }

  orbitBy(dAzimuthDeg: number, dElevationDeg: number): void {
    this.state.orbit.azimuthDeg += dAzimuthDeg
    this.state.orbit.elevationDeg = clampElevation(
      this.state.orbit.elevationDeg + dElevationDeg
    )
    this.refresh()
  }

  setOrbit(azimuthDeg: number, elevationDeg: number, radius?: number): void {
    this.state.orbit.azimuthDeg = azimuthDeg
    this.state.orbit.elevationDeg = clampElevation(elevationDeg)
    if (radius !== undefined) this.state.orbit.radius = radius
    this.refresh()
  }

  zoomBy(factor: number): void {
    this.state.orbit.radius = Math.max(0.5, this.state.orbit.radius * factor)
    this.refresh()
  }

  setMode(mode: Mode): void {
    this.state.lighting.mode = mode
    this.refresh()
  }

  setFlash(flash: boolean): void {
    this.state.lighting.flash = flash
    this.refresh()
  }

  setAmbient(ambient: number): void {
    this.state.lighting.ambient = Math.min(1, Math.max(0, ambient))
    this.refresh()
  }

  setLightDirection(direction: [number, number, number]): void {
    this.state.lighting.direction = direction
    this.refresh()
  }

  setColor(color: [number, number, number]): void {
    this.state.lighting.color = color
    this.refresh()
  }

  setPointDistance(distance: number): void {
    this.state.lighting.pointDistance = Math.max(0.01, distance)
    this.refresh()
  }

  uploadShFile(text: string): void {
    try {
      this.state.lighting.shCoefficients = parseShUpload(text)
    } catch (error) {
      this.hooks.onToast((error as Error).message)
      return
    }
    this.state.lighting.mode = 'sh'
    this.refresh()
  }
}

export { ServerError }
