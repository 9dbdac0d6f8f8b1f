/** Side-by-side history of recent submissions: the last K (sketch, mesh)
 * pairs, oldest evicted first. Sketches are stored as raster copies so a
 * thumbnail click can restore the exact drawing. */

export interface SessionEntry<M> {
  sketch: Uint8Array;
  resolution: number;
  mesh: M;
  iouPreview: number;
  label: string;
}

export class SessionStrip<M> {
  private entries: SessionEntry<M>[] = [];

  constructor(readonly capacity = 4) {
    if (capacity < 1) throw new Error("capacity must be >= 1");
  }

  add(entry: SessionEntry<M>): void {
    this.entries.push({ ...entry, sketch: entry.sketch.slice() });
    if (this.entries.length > this.capacity) this.entries.shift();
  }

  list(): readonly SessionEntry<M>[] {
    return this.entries;
  }

  get(index: number): SessionEntry<M> {
    const e = this.entries[index];
    if (!e) throw new Error(`no session entry ${index}`);
    return e;
  }

  get size(): number {
    return this.entries.length;
  }

  clear(): void {
    this.entries = [];
  }
}
