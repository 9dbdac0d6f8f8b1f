/** DOM wrapper around SketchGrid: pointer capture on a scaled-up canvas,
 * pen/eraser tools, undo, and binary PNG export at the model resolution. */

import { SketchGrid, Tool } from "./sketch-grid.js";

export class SketchCanvas {
  grid: SketchGrid;
  tool: Tool = "pen";
  readonly canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private drawing = false;
  private last: [number, number] | null = null;
  onChange: (() => void) | null = null;

  constructor(container: HTMLElement, resolution: number,
              displaySize = 384) {
    this.grid = new SketchGrid(resolution);
    this.canvas = document.createElement("canvas");
    this.canvas.width = displaySize;
    this.canvas.height = displaySize;
    this.canvas.className = "sketch-surface";
    container.appendChild(this.canvas);
    this.ctx = this.canvas.getContext("2d")!;
    this.ctx.imageSmoothingEnabled = false;
    this.attach();
    this.redraw();
  }

  private gridCoords(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const n = this.grid.resolution;
    return [
      ((e.clientX - rect.left) / rect.width) * n - 0.5,
      ((e.clientY - rect.top) / rect.height) * n - 0.5,
    ];
  }

  private attach(): void {
    this.canvas.addEventListener("pointerdown", (e) => {
      this.drawing = true;
      this.grid.beginStroke();
      this.last = this.gridCoords(e);
      const [x, y] = this.last;
      this.grid.strokeSegment(x, y, x, y, this.tool);
      this.canvas.setPointerCapture(e.pointerId);
      this.redraw();
    });
    this.canvas.addEventListener("pointermove", (e) => {
      if (!this.drawing || !this.last) return;
      const [x, y] = this.gridCoords(e);
      this.grid.strokeSegment(this.last[0], this.last[1], x, y, this.tool);
      this.last = [x, y];
      this.redraw();
    });
    const stop = () => {
      this.drawing = false;
      this.last = null;
      this.onChange?.();
    };
    this.canvas.addEventListener("pointerup", stop);
    this.canvas.addEventListener("pointercancel", stop);
  }

  undo(): void {
    if (this.grid.undo()) this.redraw();
  }

  clear(): void {
    this.grid.clear();
    this.redraw();
  }

  restore(data: Uint8Array): void {
    this.grid.load(data);
    this.redraw();
  }

  redraw(): void {
    const n = this.grid.resolution;
    const off = document.createElement("canvas");
    off.width = n;
    off.height = n;
    const octx = off.getContext("2d")!;
    octx.putImageData(new ImageData(this.grid.toRGBA(), n, n), 0, 0);
    this.ctx.imageSmoothingEnabled = false;
    this.ctx.fillStyle = "#000";
    this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    this.ctx.drawImage(off, 0, 0, this.canvas.width, this.canvas.height);
  }

  /** Binary PNG of the exact grid the match meter will be computed on. */
  exportPngBase64(): string {
    const n = this.grid.resolution;
    const off = document.createElement("canvas");
    off.width = n;
    off.height = n;
    off.getContext("2d")!.putImageData(new ImageData(this.grid.toRGBA(), n, n), 0, 0);
    const dataUrl = off.toDataURL("image/png");
    return dataUrl.slice(dataUrl.indexOf(",") + 1);
  }
}
