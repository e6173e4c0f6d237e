/**
 * Debounced, latest-wins render scheduling: at most one request in flight,
 * superseded requests are aborted, and the frame shown last always matches
 * the state submitted last.
 */

export interface Scheduled<R> {
  send: (request: R, signal: AbortSignal) => Promise<Blob>
  onFrame: (frame: Blob, request: R) => void
  onError: (error: Error) => void
  debounceMs?: number
}

export class RenderScheduler<R> {
  private timer: ReturnType<typeof setTimeout> | null = null
  private next: R | null = null
  private inFlight = false
  private controller: AbortController | null = null
  private readonly debounceMs: number

  constructor(private readonly hooks: Scheduled<R>) {
    this.debounceMs = hooks.debounceMs ?? 80
  }

  get busy(): boolean {
    return this.inFlight || this.next !== null || this.timer !== null
  }

  submit(request: R): void {
    this.next = request
    if (this.timer !== null) clearTimeout(this.timer)
    this.timer = setTimeout(() => {
      this.timer = null
      this.controller?.abort() // a newer state exists; drop the stale render
      void this.pump()
    }, this.debounceMs)
  }

  /** Resolves once no work is pending (tests use this to drain). */
  async idle(): Promise<void> {
    while (this.busy) {
      await new Promise((resolve) => setTimeout(resolve, 1))
    }
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.next === null) return
    const request = this.next
    this.next = null
    this.inFlight = true
    this.controller = new AbortController()
    try {
      const frame = await this.hooks.send(request, this.controller.signal)
      if (!this.controller.signal.aborted) {
        this.hooks.onFrame(frame, request)
      }
    } catch (error) {
      if (!isAbort(error)) this.hooks.onError(error as Error)
    } finally {
      this.inFlight = false
      this.controller = null
      if (this.next !== null && this.timer === null) void this.pump()
    }
  }
}

function isAbort(error: unknown): boolean {
  return error instanceof DOMException && error.name === 'AbortError'
}
