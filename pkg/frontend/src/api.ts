/**
 * Wire types for the frame service plus a schema mirror used to contract-test
 * every request the viewer composes. The server is the source of truth; this
 * schema matches its validator so a request that fails here would 400 there.
 */
import { z } from 'zod'

export const cameraSchema = z.object({
  fx: z.number().positive(),
  fy: z.number().positive(),
  cx: z.number(),
  cy: z.number(),
  r: z.array(z.number()).length(9),
  t: z.array(z.number()).length(3),
  w: z.number().int().min(1),
  h: z.number().int().min(1)
})

export const lightingSchema = z.discriminatedUnion('mode', [
  z.object({ mode: z.literal('original'), flash: z.boolean() }),
  z.object({
    mode: z.literal('directional'),
    direction: z.array(z.number()).length(3),
    ambient: z.number().min(0).max(1),
    color: z.array(z.number()).length(3)
  }),
  z.object({
    mode: z.literal('point'),
    direction: z.array(z.number()).length(3),
    distance: z.number().positive(),
    color: z.array(z.number()).length(3)
  }),
  z.object({
    mode: z.literal('sh'),
    coefficients: z.array(z.number()).length(27)
  })
])

export const renderRequestSchema = z.object({
  camera: cameraSchema,
  lighting: lightingSchema,
  output: z.literal('png')
})

export type CameraJson = z.infer<typeof cameraSchema>
export type LightingJson = z.infer<typeof lightingSchema>
export type RenderRequest = z.infer<typeof renderRequestSchema>

export class ServerError extends Error {
  constructor(
    readonly status: number,
    message: string
  ) {
    super(message)
  }
}

export interface ModelInfo {
  points: number
  descriptor_dim: number
  trained_steps: number
  lighting_modes: string[]
}

/** Thin HTTP client; render() honors an AbortSignal so stale requests die. */
export class FrameServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch
  ) {}

  async info(): Promise<ModelInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/model/info`)
    if (!res.ok) throw new ServerError(res.status, await describeError(res))
    return (await res.json()) as ModelInfo
  }

  async render(request: RenderRequest, signal?: AbortSignal): Promise<Blob> {
    const res = await this.fetchFn(`${this.baseUrl}/render`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(request),
      signal
    })
    if (!res.ok) throw new ServerError(res.status, await describeError(res))
    return res.blob()
  }
}

/** Surface the server's own message (the `detail` field) verbatim. */
async function describeError(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown }
    if (typeof body.detail === 'string') return body.detail
    return JSON.stringify(body)
  } catch {
    return `HTTP ${res.status}`
  }
}
