/** Typed client for the sketchmesh inference server. */

export interface HealthInfo {
  status: string;
  checkpoint_digest: string;
  model_resolution: number;
}

export interface Pose {
  elevation_deg: number;
  azimuth_deg: number;
  distance: number;
}

export interface InferResult {
  mesh_obj: string;
  pose: Pose;
  iou_preview: number;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string,
              public expectedResolution?: number) {
    super(`server ${status}: ${detail}`);
  }
}

type FetchLike = typeof fetch;

export class SketchmeshClient {
  constructor(public baseUrl: string, private fetchImpl: FetchLike = fetch) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  async health(): Promise<HealthInfo> {
    const res = await this.fetchImpl(this.url("/health"));
    const body = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, body.detail ?? body.status ?? "not ready");
    }
    return body as HealthInfo;
  }

  async infer(sketchPngBase64: string, resolution?: number): Promise<InferResult> {
    const payload: Record<string, unknown> = { sketch_png_base64: sketchPngBase64 };
    if (resolution !== undefined) payload.resolution = resolution;
    const res = await this.fetchImpl(this.url("/infer"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    const body = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, body.detail ?? "request failed",
                         body.expected_resolution);
    }
    return body as InferResult;
  }
}
