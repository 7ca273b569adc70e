/** Hex <-> normalized RGB conversion. The UI does no other color math;
 * all compositing truth lives server-side. */

export type Rgb = [number, number, number];

export function isValidHex(text: string): boolean {
  return /^#?[0-9a-fA-F]{6}$/.test(text.trim());
}

export function hexToRgb(text: string): Rgb {
  const t = text.trim().replace(/^#/, "");
  if (!/^[0-9a-fA-F]{6}$/.test(t)) {
    throw new Error(`not a #RRGGBB color: ${text}`);
  }
  return [0, 2, 4].map((i) => parseInt(t.slice(i, i + 2), 16) / 255) as Rgb;
}

export function rgbToHex(rgb: Rgb): string {
  const channel = (v: number) => {
    if (!Number.isFinite(v) || v < 0 || v > 1) {
      throw new Error(`channel ${v} outside [0, 1]`);
    }
    return Math.round(v * 255)
      .toString(16)
      .padStart(2, "0");
  };
  return `#${rgb.map(channel).join("")}`;
}

export function clamp01(rgb: Rgb): Rgb {
  return rgb.map((v) => Math.min(1, Math.max(0, v))) as Rgb;
}

export function sameColors(a: number[][], b: number[][], tol = 1e-9): boolean {
  if (a.length !== b.length) return false;
  return a.every((row, i) => row.every((v, j) => Math.abs(v - b[i][j]) <= tol));
}
