/**
 * Synchronized zoom/pan for the two comparison panes.
 *
 * One shared transform (scale + offset) is applied to both images so the
 * annotator always inspects the same region of both renditions. Wheel zooms
 * about the cursor; dragging pans. Double-click resets.
 */

export interface ZoomState {
  scale: number;
  x: number;
  y: number;
}

const MIN_SCALE = 1;
const MAX_SCALE = 12;

export class SyncZoom {
  state: ZoomState = { scale: 1, x: 0, y: 0 };
  private targets: HTMLElement[] = [];
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  attach(panes: HTMLElement[], images: HTMLElement[]): void {
    this.targets = images;
    for (const pane of panes) {
      pane.addEventListener("wheel", (ev) => this.onWheel(ev as WheelEvent));
      pane.addEventListener("mousedown", (ev) => this.onDown(ev as MouseEvent));
      pane.addEventListener("mousemove", (ev) => this.onMove(ev as MouseEvent));
      pane.addEventListener("mouseup", () => (this.dragging = false));
      pane.addEventListener("mouseleave", () => (this.dragging = false));
      pane.addEventListener("dblclick", () => this.reset());
    }
    this.apply();
  }

  reset(): void {
    this.state = { scale: 1, x: 0, y: 0 };
    this.apply();
  }

  private onWheel(ev: WheelEvent): void {
    ev.preventDefault();
    const factor = ev.deltaY < 0 ? 1.25 : 0.8;
    const next = Math.min(MAX_SCALE, Math.max(MIN_SCALE, this.state.scale * factor));
    if (next === this.state.scale) return;
    // keep the cursor-anchored point fixed while rescaling
    const ratio = next / this.state.scale;
    this.state.x = ev.offsetX - ratio * (ev.offsetX - this.state.x);
    this.state.y = ev.offsetY - ratio * (ev.offsetY - this.state.y);
    this.state.scale = next;
    if (next === MIN_SCALE) this.state.x = this.state.y = 0;
    this.apply();
  }

  private onDown(ev: MouseEvent): void {
    if (this.state.scale === 1) return;
    this.dragging = true;
    this.lastX = ev.clientX;
    this.lastY = ev.clientY;
    ev.preventDefault();
  }

  private onMove(ev: MouseEvent): void {
    if (!this.dragging) return;
    this.state.x += ev.clientX - this.lastX;
    this.state.y += ev.clientY - this.lastY;
    this.lastX = ev.clientX;
    this.lastY = ev.clientY;
    this.apply();
  }

  private apply(): void {
    const { scale, x, y } = this.state;
    const transform = `translate(${x}px, ${y}px) scale(${scale})`;
    for (const el of this.targets) {
      el.style.transform = transform;
      el.style.transformOrigin = "0 0";
    }
  }
}
