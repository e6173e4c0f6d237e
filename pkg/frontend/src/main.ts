/**
 * DOM shell: wires the control panel to a ViewerSession. The service origin
 * comes from the `?api=` query parameter (default: same host, port 8000).
 */
import { FrameServiceClient } from './api'
import { ViewerSession } from './session'
import { trackballDirection, type Mode } from './state'

const params = new URLSearchParams(location.search)
const apiBase = params.get('api') ?? `${location.protocol}//${location.hostname}:8000`

const viewport = document.getElementById('viewport') as HTMLImageElement
const toast = document.getElementById('toast') as HTMLDivElement
const status = document.getElementById('status') as HTMLSpanElement

let toastTimer: ReturnType<typeof setTimeout> | null = null
function showToast(message: string): void {
  toast.textContent = message
  toast.classList.add('visible')
  if (toastTimer !== null) clearTimeout(toastTimer)
  toastTimer = setTimeout(() => toast.classList.remove('visible'), 4000)
}

let lastUrl: string | null = null
const session = new ViewerSession(new FrameServiceClient(apiBase), {
  onFrame: (frame) => {
    const url = URL.createObjectURL(frame)
    viewport.src = url
    if (lastUrl !== null) URL.revokeObjectURL(lastUrl)
    lastUrl = url
  },
  onToast: showToast
})

// -- orbit: drag to rotate, wheel to zoom -----------------------------------

let dragging = false
let lastX = 0
let lastY = 0
viewport.addEventListener('pointerdown', (e) => {
  dragging = true
  lastX = e.clientX
  lastY = e.clientY
  viewport.setPointerCapture(e.pointerId)
})
viewport.addEventListener('pointermove', (e) => {
  if (!dragging) return
  session.orbitBy((e.clientX - lastX) * 0.4, (e.clientY - lastY) * 0.4)
  lastX = e.clientX
  lastY = e.clientY
})
viewport.addEventListener('pointerup', () => {
  dragging = false
})
viewport.addEventListener('wheel', (e) => {
  e.preventDefault()
  session.zoomBy(e.deltaY > 0 ? 1.1 : 1 / 1.1)
})

// -- mode tabs ----------------------------------------------------------------

for (const button of document.querySelectorAll<HTMLButtonElement>('[data-mode]')) {
  button.addEventListener('click', () => {
    for (const other of document.querySelectorAll('[data-mode]')) {
      other.classList.toggle('active', other === button)
    }
    document.body.dataset.mode = button.dataset.mode
    session.setMode(button.dataset.mode as Mode)
  })
}

// -- lighting controls ---------------------------------------------------------

const flashToggle = document.getElementById('flash') as HTMLInputElement
flashToggle.addEventListener('change', () => session.setFlash(flashToggle.checked))

const ambient = document.getElementById('ambient') as HTMLInputElement
ambient.addEventListener('input', () => session.setAmbient(Number(ambient.value)))

const color = document.getElementById('color') as HTMLInputElement
color.addEventListener('input', () => {
  const v = color.value
  session.setColor([
    parseInt(v.slice(1, 3), 16) / 255,
    parseInt(v.slice(3, 5), 16) / 255,
    parseInt(v.slice(5, 7), 16) / 255
  ])
})

const distance = document.getElementById('distance') as HTMLInputElement
distance.addEventListener('input', () => session.setPointDistance(Number(distance.value)))

const trackball = document.getElementById('trackball') as HTMLCanvasElement
const marker = { u: 0.5, v: 0.5 }
function drawTrackball(): void {
  const ctx = trackball.getContext('2d')!
  const s = trackball.width
  ctx.clearRect(0, 0, s, s)
  ctx.strokeStyle = '#8ab'
  ctx.beginPath()
  ctx.arc(s / 2, s / 2, s / 2 - 1, 0, 2 * Math.PI)
  ctx.stroke()
  // axis gizmo of the frontal head view: +x right, +y up, light flows to -z
  ctx.strokeStyle = '#567'
  ctx.beginPath()
  ctx.moveTo(s / 2, s / 2)
  ctx.lineTo(s - 6, s / 2)
  ctx.moveTo(s / 2, s / 2)
  ctx.lineTo(s / 2, 6)
  ctx.stroke()
  ctx.fillStyle = '#fc3'
  ctx.beginPath()
  ctx.arc(marker.u * s, marker.v * s, 4, 0, 2 * Math.PI)
  ctx.fill()
}
function pickLight(e: PointerEvent): void {
  const rect = trackball.getBoundingClientRect()
  marker.u = (e.clientX - rect.left) / rect.width
  marker.v = (e.clientY - rect.top) / rect.height
  drawTrackball()
  session.setLightDirection(trackballDirection(marker.u, marker.v))
}
let tracking = false
trackball.addEventListener('pointerdown', (e) => {
  tracking = true
  trackball.setPointerCapture(e.pointerId)
  pickLight(e)
})
trackball.addEventListener('pointermove', (e) => {
  if (tracking) pickLight(e)
})
trackball.addEventListener('pointerup', () => {
  tracking = false
})
drawTrackball()

const shFile = document.getElementById('sh-file') as HTMLInputElement
shFile.addEventListener('change', async () => {
  const file = shFile.files?.[0]
  if (!file) return
  session.uploadShFile(await file.text())
})

new FrameServiceClient(apiBase)
  .info()
  .then((info) => {
    status.textContent = `${info.points.toLocaleString()} points · ${info.trained_steps} steps`
  })
  .catch((e) => showToast(`service unreachable: ${(e as Error).message}`))

session.refresh()
