/** Minimal OBJ parser for the server's mesh payloads: "v x y z" vertex
 * lines and triangular "f i j k" faces with 1-based indices. */

export interface ParsedMesh {
  positions: Float32Array; // xyz triplets
  indices: Uint32Array;    // zero-based triangles
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const indices: number[] = [];
  const lines = text.split(/\r?\n/);
  for (let ln = 0; ln < lines.length; ln++) {
    const body = lines[ln].split("#", 1)[0].trim();
    if (!body) continue;
    const parts = body.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length < 4) throw new Error(`line ${ln + 1}: malformed vertex`);
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === "f") {
      if (parts.length !== 4) {
        throw new Error(`line ${ln + 1}: only triangle faces are supported`);
      }
      for (let k = 1; k <= 3; k++) {
        const idx = Number(parts[k].split("/")[0]);
        if (!Number.isInteger(idx) || idx === 0) {
          throw new Error(`line ${ln + 1}: bad face index '${parts[k]}'`);
        }
        indices.push(idx > 0 ? idx - 1 : positions.length / 3 + idx);
      }
    }
  }
  if (!positions.length || !indices.length) {
    throw new Error("no geometry found in OBJ text");
  }
  const maxIndex = Math.max(...indices);
  if (maxIndex >= positions.length / 3) {
    throw new Error(`face index ${maxIndex + 1} exceeds vertex count`);
  }
  return {
    positions: new Float32Array(positions),
    indices: new Uint32Array(indices),
  };
}
