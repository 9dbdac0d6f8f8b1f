/** Binary raster the user draws into. The grid at the server's model
 * resolution is the source of truth: the display canvas and the exported
 * PNG both render this exact grid, so the match meter compares precisely
 * what the user saw. */

export type Tool = "pen" | "eraser";

export class SketchGrid {
  readonly resolution: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private readonly maxUndo: number;

  constructor(resolution: number, maxUndo = 20) {
    if (resolution < 2) throw new Error(`bad resolution ${resolution}`);
    this.resolution = resolution;
    this.maxUndo = maxUndo;
    this.data = new Uint8Array(resolution * resolution);
  }

  /** Snapshot the current raster; call once per stroke. */
  beginStroke(): void {
    this.undoStack.push(this.data.slice());
    if (this.undoStack.length > this.maxUndo) this.undoStack.shift();
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data = prev;
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  clear(): void {
    this.beginStroke();
    this.data.fill(0);
  }

  private stamp(cx: number, cy: number, radius: number, value: number): void {
    const r = Math.max(0, Math.ceil(radius - 0.5));
    const n = this.resolution;
    for (let dy = -r; dy <= r; dy++) {
      for (let dx = -r; dx <= r; dx++) {
        if (dx * dx + dy * dy > radius * radius) continue;
        const x = Math.round(cx) + dx;
        const y = Math.round(cy) + dy;
        if (x >= 0 && x < n && y >= 0 && y < n) this.data[y * n + x] = value;
      }
    }
  }

  /** Rasterize a stroke segment in grid coordinates. Brush width 2 px. */
  strokeSegment(x0: number, y0: number, x1: number, y1: number,
                tool: Tool = "pen"): void {
    const value = tool === "pen" ? 1 : 0;
    const radius = tool === "pen" ? 1.0 : 1.8;
    const steps = Math.max(1, Math.ceil(Math.hypot(x1 - x0, y1 - y0) * 2));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stamp(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, value);
    }
  }

  foregroundCount(): number {
    let c = 0;
    for (const v of this.data) c += v;
    return c;
  }

  isEmpty(): boolean {
    return this.foregroundCount() === 0;
  }

  /** Strictly binary RGBA pixels: foreground white, background black. */
  toRGBA(): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(this.data.length * 4);
    for (let i = 0; i < this.data.length; i++) {
      const v = this.data[i] ? 255 : 0;
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
      out[i * 4 + 3] = 255;
    }
    return out;
  }

  load(data: Uint8Array): void {
    if (data.length !== this.data.length) {
      throw new Error(`grid size mismatch: ${data.length} != ${this.data.length}`);
    }
    this.beginStroke();
    this.data = data.slice();
  }
}
