/** Editing-session state machine, framework-free so tests can drive it.
 *
 * Guarantees surfaced to the UI layer:
 *  - previews never regress: a render whose revision predates the last
 *    acknowledged edit is dropped (and superseded requests are aborted);
 *  - at most one in-flight render per pane, newer requests cancel older;
 *  - draft colors are validated to [0, 1] before anything is submitted.
 */

import { ApiClient, ApiError, Meta } from "./api.js";
import { Rgb, rgbToHex, sameColors } from "./color.js";

export interface Preview {
  bytes: Uint8Array;
  revision: number;
  view: number;
  layer: number | null;
}

export type SessionEvent =
  | { kind: "loaded" }
  | { kind: "palette"; colors: number[][]; revision: number }
  | { kind: "preview"; preview: Preview }
  | { kind: "error"; message: string };

type Listener = (event: SessionEvent) => void;

export class UiSession {
  api: ApiClient;
  meta: Meta | null = null;
  draft: number[][] = [];
  initialColors: number[][] = [];
  view = 0;
  overlayLayer: number | null = null;
  lastRevision = 0;
  /** Revision of the user's latest acknowledged edit; older previews drop. */
  lastAckRevision = 0;
  preview: Preview | null = null;

  private listeners: Listener[] = [];
  private renderSeq = 0;
  private inflight: AbortController | null = null;

  constructor(baseUrl: string, fetchImpl?: typeof fetch) {
    this.api = new ApiClient(baseUrl, fetchImpl);
  }

  on(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(event: SessionEvent): void {
    for (const listener of this.listeners) listener(event);
  }

  get loaded(): boolean {
    return this.meta !== null;
  }

  get pristine(): boolean {
    return sameColors(this.draft, this.initialColors);
  }

  async load(): Promise<void> {
    try {
      this.meta = await this.api.getMeta();
      const palette = await this.api.getPalette();
      this.draft = palette.colors.map((c) => [...c]);
      this.initialColors = palette.colors.map((c) => [...c]);
      this.lastRevision = palette.revision;
      this.lastAckRevision = palette.revision;
      this.emit({ kind: "loaded" });
      this.emit({
        kind: "palette",
        colors: this.draft,
        revision: this.lastRevision,
      });
      await this.refreshPreview();
    } catch (err) {
      this.meta = null;
      this.emit({ kind: "error", message: describe(err) });
      throw err;
    }
  }

  swatchHexes(): string[] {
    return this.draft.map((c) => rgbToHex(c as Rgb));
  }

  /** Optimistic local update, then PUT with If-Match; a 409 reconciles the
   * draft from the server before the preview refresh. */
  async editSwatch(index: number, color: Rgb): Promise<void> {
    if (!this.meta) throw new Error("session not loaded");
    if (index < 0 || index >= this.draft.length) {
      throw new Error(`swatch ${index} out of range`);
    }
    if (color.some((v) => !Number.isFinite(v) || v < 0 || v > 1)) {
      throw new Error("color channels must lie in [0, 1]");
    }
    const previous = this.draft[index];
    this.draft[index] = [...color];
    this.emit({ kind: "palette", colors: this.draft, revision: this.lastRevision });
    try {
      const revision = await this.api.putPalette(
        { index, color: [...color] },
        this.lastRevision,
      );
      this.lastRevision = revision;
      this.lastAckRevision = revision;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.reconcile();
      } else {
        this.draft[index] = previous;
        this.emit({ kind: "error", message: describe(err) });
        throw err;
      }
    }
    await this.refreshPreview();
  }

  /** Pull the authoritative palette after a revision conflict. */
  async reconcile(): Promise<void> {
    const palette = await this.api.getPalette();
    this.draft = palette.colors.map((c) => [...c]);
    this.lastRevision = palette.revision;
    this.lastAckRevision = palette.revision;
    this.emit({ kind: "palette", colors: this.draft, revision: palette.revision });
  }

  async toggleLayerOverlay(index: number): Promise<void> {
    if (!this.meta) throw new Error("session not loaded");
    if (index < 0 || index > this.meta.K) {
      throw new Error(`layer ${index} out of range`);
    }
    this.overlayLayer = this.overlayLayer === index ? null : index;
    await this.refreshPreview();
  }

  async selectView(index: number): Promise<void> {
    if (!this.meta) throw new Error("session not loaded");
    if (index < 0 || index >= this.meta.views.length) {
      throw new Error(`view ${index} out of range`);
    }
    this.view = index;
    await this.refreshPreview();
  }

  /** Restore the checkpoint palette via a full-colors PUT. */
  async resetPalette(): Promise<void> {
    if (!this.meta) throw new Error("session not loaded");
    if (this.pristine) return;
    const revision = await this.api.putPalette(
      { colors: this.initialColors.map((c) => [...c]) },
      this.lastRevision,
    );
    this.draft = this.initialColors.map((c) => [...c]);
    this.lastRevision = revision;
    this.lastAckRevision = revision;
    this.emit({ kind: "palette", colors: this.draft, revision });
    await this.refreshPreview();
  }

  /** Fetch the current pane; stale responses (older sequence or revision
   * older than the last acknowledged edit) never reach the listeners. */
  async refreshPreview(): Promise<Preview | null> {
    if (!this.meta) return null;
    const seq = ++this.renderSeq;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const view = this.view;
    const layer = this.overlayLayer;
    try {
      const result = await this.api.render(view, {
        layer: layer ?? undefined,
        signal: controller.signal,
      });
      if (seq !== this.renderSeq) return null; // superseded meanwhile
      if (result.revision < this.lastAckRevision) {
        return null; // stale snapshot from before our acknowledged edit
      }
      const preview: Preview = {
        bytes: result.bytes,
        revision: result.revision,
        view,
        layer,
      };
      this.preview = preview;
      this.emit({ kind: "preview", preview });
      return preview;
    } catch (err) {
      if ((err as Error).name === "AbortError") return null;
      this.emit({ kind: "error", message: describe(err) });
      throw err;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

export async function loadSession(
  baseUrl: string,
  fetchImpl?: typeof fetch,
): Promise<UiSession> {
  const session = new UiSession(baseUrl, fetchImpl);
  await session.load();
  return session;
}
