/** Rendering helpers. Every statistic shown in the console is a service
 * value passed through one of these; the console itself never computes. */

export function fixed4(x: number): string {
  return x.toFixed(4);
}

export function fixed1(x: number): string {
  return x.toFixed(1);
}

export function doseLabel(dose: number | null | undefined): string {
  return dose === null || dose === undefined ? "none" : String(dose);
}

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
