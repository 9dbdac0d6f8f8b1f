import { describe, expect, it } from "vitest";

import { SketchGrid } from "../src/sketch-grid.js";

describe("SketchGrid", () => {
  it("starts blank and reports emptiness", () => {
    const g = new SketchGrid(32);
    expect(g.isEmpty()).toBe(true);
    expect(g.foregroundCount()).toBe(0);
  });

  it("undo after one stroke restores a blank canvas", () => {
    const g = new SketchGrid(32);
    g.beginStroke();
    g.strokeSegment(4, 4, 20, 20);
    expect(g.isEmpty()).toBe(false);
    expect(g.undo()).toBe(true);
    expect(g.isEmpty()).toBe(true);
    expect(g.undo()).toBe(false);
  });

  it("keeps at least 20 undo steps", () => {
    const g = new SketchGrid(32, 20);
    for (let i = 0; i < 25; i++) {
      g.beginStroke();
      g.strokeSegment(i, i, i, i);
    }
    expect(g.undoDepth).toBe(20);
    let undone = 0;
    while (g.undo()) undone++;
    expect(undone).toBe(20);
  });

  it("eraser removes pen marks", () => {
    const g = new SketchGrid(32);
    g.beginStroke();
    g.strokeSegment(10, 10, 14, 10, "pen");
    const before = g.foregroundCount();
    g.beginStroke();
    g.strokeSegment(10, 10, 14, 10, "eraser");
    expect(g.foregroundCount()).toBeLessThan(before);
  });

  it("exports strictly binary RGBA", () => {
    const g = new SketchGrid(16);
    g.beginStroke();
    g.strokeSegment(2, 2, 12, 9);
    const rgba = g.toRGBA();
    const channels = new Set<number>();
    for (let i = 0; i < rgba.length; i += 4) {
      channels.add(rgba[i]);
      expect(rgba[i]).toBe(rgba[i + 1]);
      expect(rgba[i]).toBe(rgba[i + 2]);
      expect(rgba[i + 3]).toBe(255);
    }
    expect([...channels].sort((a, b) => a - b)).toEqual([0, 255]);
  });

  it("stroke clips at the borders", () => {
    const g = new SketchGrid(16);
    g.beginStroke();
    g.strokeSegment(-5, -5, 30, 30);
    expect(g.foregroundCount()).toBeGreaterThan(0);
  });

  it("load restores an external raster and is undoable", () => {
    const g = new SketchGrid(8);
    const external = new Uint8Array(64).fill(1);
    g.load(external);
    expect(g.foregroundCount()).toBe(64);
    expect(g.undo()).toBe(true);
    expect(g.isEmpty()).toBe(true);
    expect(() => g.load(new Uint8Array(4))).toThrow(/mismatch/);
  });

  it("clear is undoable", () => {
    const g = new SketchGrid(8);
    g.beginStroke();
    g.strokeSegment(2, 2, 5, 5);
    const count = g.foregroundCount();
    g.clear();
    expect(g.isEmpty()).toBe(true);
    g.undo();
    expect(g.foregroundCount()).toBe(count);
  });
});
