/** Wires the sketchpad together: server connection, drawing surface,
 * submission gate, mesh viewport, match meter, and the session strip. */

import { ApiError, InferResult, SketchmeshClient } from "./api.js";
import { MeshViewer } from "./viewer.js";
import { ParsedMesh, parseObj } from "./obj-parser.js";
import { RequestGate } from "./queue.js";
import { SessionStrip } from "./session.js";
import { SketchCanvas } from "./sketch-canvas.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

interface MeshRecord {
  parsed: ParsedMesh;
  result: InferResult;
}

class App {
  private client: SketchmeshClient | null = null;
  private sketch: SketchCanvas | null = null;
  private viewer: MeshViewer | null = null;
  private gate = new RequestGate<InferResult>();
  private session = new SessionStrip<MeshRecord>(4);
  private resolution = 0;

  constructor() {
    el<HTMLButtonElement>("connect").addEventListener("click", () => this.connect());
    el<HTMLButtonElement>("submit").addEventListener("click", () => this.submit());
    el<HTMLButtonElement>("undo").addEventListener("click", () => this.sketch?.undo());
    el<HTMLButtonElement>("clear").addEventListener("click", () => this.sketch?.clear());
    el<HTMLButtonElement>("clear-session").addEventListener("click", () => {
      this.session.clear();
      this.renderSession();
    });
    for (const tool of ["pen", "eraser"] as const) {
      el<HTMLButtonElement>(`tool-${tool}`).addEventListener("click", () => {
        if (this.sketch) this.sketch.tool = tool;
        el("tool-pen").classList.toggle("active", tool === "pen");
        el("tool-eraser").classList.toggle("active", tool === "eraser");
      });
    }
  }

  private banner(message: string, kind: "info" | "error" = "info"): void {
    const b = el("banner");
    b.textContent = message;
    b.className = `banner ${kind}`;
  }

  private async connect(): Promise<void> {
    const base = el<HTMLInputElement>("server-url").value.trim();
    try {
      const client = new SketchmeshClient(base);
      const health = await client.health();
      this.client = client;
      this.resolution = health.model_resolution;
      el("status").textContent =
        `ready · ${health.model_resolution}px · ${health.checkpoint_digest.slice(0, 12)}`;
      const holder = el("canvas-holder");
      holder.innerHTML = "";
      this.sketch = new SketchCanvas(holder, health.model_resolution);
      if (!this.viewer) this.viewer = new MeshViewer(el("viewer"));
      this.banner("draw a closed outline, then submit");
    } catch (err) {
      this.banner(`cannot reach server: ${(err as Error).message}`, "error");
    }
  }

  private async submit(): Promise<void> {
    if (!this.client || !this.sketch) {
      this.banner("connect to a server first", "error");
      return;
    }
    if (this.sketch.grid.isEmpty()) {
      this.banner("the sketch is empty", "error");
      return;
    }
    const png = this.sketch.exportPngBase64();
    const sketchCopy = this.sketch.grid.data.slice();
    const client = this.client;
    this.banner("inferring…");
    try {
      const outcome = await this.gate.submit(() =>
        client.infer(png, this.resolution));
      if (outcome.kind === "superseded") return;
      const result = outcome.value;
      const parsed = parseObj(result.mesh_obj);
      this.viewer!.showMesh(parsed, result.pose);
      this.updateMeter(result);
      this.session.add({
        sketch: sketchCopy,
        resolution: this.resolution,
        mesh: { parsed, result },
        iouPreview: result.iou_preview,
        label: `az ${result.pose.azimuth_deg.toFixed(0)}° el ${result.pose.elevation_deg.toFixed(0)}°`,
      });
      this.renderSession();
      this.banner("mesh updated — drag the viewport to orbit");
    } catch (err) {
      if (err instanceof ApiError) {
        const extra = err.expectedResolution
          ? ` (expected ${err.expectedResolution}px)` : "";
        this.banner(`${err.detail}${extra}`, "error");
      } else {
        this.banner(`request failed: ${(err as Error).message}`, "error");
      }
    }
  }

  private updateMeter(result: InferResult): void {
    const pct = Math.round(result.iou_preview * 100);
    el("meter-fill").style.width = `${pct}%`;
    el("meter-label").textContent =
      `silhouette match ${pct}% · pose az ${result.pose.azimuth_deg.toFixed(1)}° ` +
      `el ${result.pose.elevation_deg.toFixed(1)}°`;
  }

  private renderSession(): void {
    const strip = el("session");
    strip.innerHTML = "";
    this.session.list().forEach((entry, i) => {
      const cell = document.createElement("div");
      cell.className = "session-cell";
      const thumb = document.createElement("canvas");
      thumb.width = entry.resolution;
      thumb.height = entry.resolution;
      const ctx = thumb.getContext("2d")!;
      const rgba = new Uint8ClampedArray(entry.sketch.length * 4);
      for (let k = 0; k < entry.sketch.length; k++) {
        const v = entry.sketch[k] ? 255 : 0;
        rgba[k * 4] = rgba[k * 4 + 1] = rgba[k * 4 + 2] = v;
        rgba[k * 4 + 3] = 255;
      }
      ctx.putImageData(new ImageData(rgba, entry.resolution, entry.resolution), 0, 0);
      thumb.title = "click to restore this sketch";
      thumb.addEventListener("click", () => {
        this.sketch?.restore(entry.sketch);
        this.viewer?.showMesh(entry.mesh.parsed, entry.mesh.result.pose);
        this.updateMeter(entry.mesh.result);
      });
      const label = document.createElement("div");
      label.textContent = `${entry.label} · ${(entry.iouPreview * 100).toFixed(0)}%`;
      cell.appendChild(thumb);
      cell.appendChild(label);
      strip.appendChild(cell);
    });
  }
}

new App();
