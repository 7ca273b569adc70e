/** DOM wiring: swatch strip with pickers, view selector, layer overlay
 * toggles, live preview pane, and reset. All state lives in UiSession. */

import { hexToRgb, isValidHex, rgbToHex } from "./color.js";
import { Preview, UiSession } from "./session.js";

export class StudioUi {
  private session: UiSession;
  private root: HTMLElement;
  private swatchStrip!: HTMLElement;
  private viewSelect!: HTMLSelectElement;
  private overlayStrip!: HTMLElement;
  private previewImg!: HTMLImageElement;
  private overlayImg!: HTMLImageElement;
  private resetButton!: HTMLButtonElement;
  private status!: HTMLElement;
  private previewUrl: string | null = null;
  private overlayUrl: string | null = null;

  constructor(session: UiSession, root: HTMLElement) {
    this.session = session;
    this.root = root;
    this.buildSkeleton();
    session.on((event) => {
      if (event.kind === "loaded") this.renderControls();
      if (event.kind === "palette") this.renderSwatches();
      if (event.kind === "preview") this.showPreview(event.preview);
      if (event.kind === "error") this.showError(event.message);
    });
  }

  private buildSkeleton(): void {
    this.root.innerHTML = `
      <div class="studio">
        <div class="toolbar">
          <select class="views" title="camera view"></select>
          <span class="overlays"></span>
          <button class="reset" disabled>Reset palette</button>
          <span class="status" role="status"></span>
        </div>
        <div class="pane">
          <img class="preview" alt="recolored render" />
          <img class="overlay" alt="layer weight overlay" />
        </div>
        <div class="swatches"></div>
      </div>`;
    this.swatchStrip = this.root.querySelector(".swatches")!;
    this.viewSelect = this.root.querySelector(".views")!;
    this.overlayStrip = this.root.querySelector(".overlays")!;
    this.previewImg = this.root.querySelector(".preview")!;
    this.overlayImg = this.root.querySelector(".overlay")!;
    this.resetButton = this.root.querySelector(".reset")!;
    this.status = this.root.querySelector(".status")!;
    this.overlayImg.style.display = "none";
    this.resetButton.addEventListener("click", () => {
      void this.session.resetPalette().catch(() => undefined);
    });
    this.viewSelect.addEventListener("change", () => {
      void this.session.selectView(Number(this.viewSelect.value));
    });
  }

  private renderControls(): void {
    const meta = this.session.meta!;
    this.viewSelect.innerHTML = "";
    for (const view of meta.views) {
      const option = document.createElement("option");
      option.value = String(view.index);
      option.textContent = `view ${view.index} (${view.width}×${view.height})`;
      this.viewSelect.appendChild(option);
    }
    this.overlayStrip.innerHTML = "";
    for (let layer = 0; layer <= meta.K; layer++) {
      const button = document.createElement("button");
      button.className = "overlay-toggle";
      button.dataset.layer = String(layer);
      button.textContent = layer === 0 ? "bg weights" : `L${layer} weights`;
      button.addEventListener("click", () => {
        void this.session.toggleLayerOverlay(layer).then(() => {
          this.markOverlayButtons();
        });
      });
      this.overlayStrip.appendChild(button);
    }
  }

  /** Swatches are listed top-to-bottom in composite order: topmost layer
   * (index K) first, background last. */
  private renderSwatches(): void {
    this.swatchStrip.innerHTML = "";
    const hexes = this.session.swatchHexes();
    for (let index = hexes.length - 1; index >= 0; index--) {
      const row = document.createElement("div");
      row.className = "swatch";
      row.dataset.index = String(index);

      const label = document.createElement("span");
      label.textContent = index === 0 ? "background" : `layer ${index}`;

      const picker = document.createElement("input");
      picker.type = "color";
      picker.value = hexes[index];

      const hexInput = document.createElement("input");
      hexInput.type = "text";
      hexInput.className = "hex";
      hexInput.value = hexes[index];
      hexInput.size = 8;

      const submit = (text: string) => {
        if (!isValidHex(text)) {
          hexInput.classList.add("invalid");
          return; // rejected client-side, nothing is sent
        }
        hexInput.classList.remove("invalid");
        void this.session.editSwatch(index, hexToRgb(text)).catch(() => undefined);
      };
      picker.addEventListener("change", () => submit(picker.value));
      hexInput.addEventListener("change", () => submit(hexInput.value));

      row.append(label, picker, hexInput);
      this.swatchStrip.appendChild(row);
    }
    this.resetButton.disabled = this.session.pristine;
  }

  private markOverlayButtons(): void {
    const active = this.session.overlayLayer;
    this.overlayStrip.querySelectorAll("button").forEach((button) => {
      button.classList.toggle(
        "active",
        active !== null && Number(button.dataset.layer) === active,
      );
    });
  }

  private showPreview(preview: Preview): void {
    const blob = new Blob([preview.bytes.slice().buffer], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    if (preview.layer === null) {
      if (this.previewUrl) URL.revokeObjectURL(this.previewUrl);
      this.previewUrl = url;
      this.previewImg.src = url;
      this.overlayImg.style.display = "none";
    } else {
      if (this.overlayUrl) URL.revokeObjectURL(this.overlayUrl);
      this.overlayUrl = url;
      this.overlayImg.src = url;
      this.overlayImg.style.display = "";
      this.overlayImg.style.opacity = "0.85";
    }
    this.status.textContent = `view ${preview.view} @ revision ${preview.revision}`;
    this.resetButton.disabled = this.session.pristine;
  }

  private showError(message: string): void {
    this.status.textContent = `error: ${message}`;
    this.status.classList.add("error");
  }
}
