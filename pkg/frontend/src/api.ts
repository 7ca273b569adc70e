/** Thin typed client for the palette-editing service API. */

export interface ViewInfo {
  index: number;
  width: number;
  height: number;
}

export interface Meta {
  mode: "2d" | "3d";
  resolution: number[];
  K: number;
  views: ViewInfo[];
  revision: number;
}

export interface PaletteBody {
  colors: number[][];
  background_index: number;
  hex: string[];
  revision: number;
}

export interface RenderResult {
  bytes: Uint8Array;
  revision: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function errorOf(response: Response): Promise<ApiError> {
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, message);
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) throw await errorOf(response);
    return (await response.json()) as T;
  }

  healthz(): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}/healthz`);
  }

  getMeta(): Promise<Meta> {
    return this.getJson<Meta>("/api/meta");
  }

  getPalette(): Promise<PaletteBody> {
    return this.getJson<PaletteBody>("/api/palette");
  }

  /** PUT a single-entry edit or a full color list; resolves to the new
   * revision. Throws ApiError with status 409 on an If-Match conflict. */
  async putPalette(
    body: { index: number; color: number[] | string } | { colors: number[][] },
    ifMatch?: number,
  ): Promise<number> {
    const headers: Record<string, string> = {
      "content-type": "application/json",
    };
    if (ifMatch !== undefined) headers["if-match"] = String(ifMatch);
    const response = await this.fetchImpl(`${this.baseUrl}/api/palette`, {
      method: "PUT",
      headers,
      body: JSON.stringify(body),
    });
    if (!response.ok) throw await errorOf(response);
    const data = await response.json();
    return data.revision as number;
  }

  async render(
    view: number,
    options: { width?: number; layer?: number; signal?: AbortSignal } = {},
  ): Promise<RenderResult> {
    const params = new URLSearchParams({ view: String(view) });
    if (options.width !== undefined) params.set("width", String(options.width));
    if (options.layer !== undefined) params.set("layer", String(options.layer));
    const response = await this.fetchImpl(
      `${this.baseUrl}/api/render?${params}`,
      { signal: options.signal },
    );
    if (!response.ok) throw await errorOf(response);
    const revision = Number(response.headers.get("x-palette-revision") ?? -1);
    const bytes = new Uint8Array(await response.arrayBuffer());
    return { bytes, revision };
  }
}
