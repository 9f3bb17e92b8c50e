// Hand-rolled SVG charts: multi-series lines with hover markers and a
// legend, a two-slice time-on pie, and 24-slot hourly bars. No chart
// library so the dashboard ships as plain static files.

import type { SeriesGroup } from "./api.js";

export const PALETTE = [
  "#2563eb", "#dc2626", "#16a34a", "#d97706", "#9333ea",
  "#0891b2", "#db2777", "#65a30d", "#7c3aed", "#b91c1c",
];

const W = 860;
const H = 320;
const PAD = { left: 56, right: 16, top: 16, bottom: 42 };

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function niceMax(value: number): number {
  if (value <= 0) return 1;
  const mag = 10 ** Math.floor(Math.log10(value));
  for (const m of [1, 2, 2.5, 5, 10]) {
    if (value <= m * mag) return m * mag;
  }
  return 10 * mag;
}

export function formatValue(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return v.toFixed(Math.abs(v) < 1 ? 4 : 2);
}

function timeLabel(ts: string): string {
  // "2017-03-01T08:30:00Z" -> "08:30" (or the date for day buckets)
  const time = ts.slice(11, 16);
  return time === "00:00" ? ts.slice(5, 10) : time;
}

export function seriesChart(groups: SeriesGroup[], unit: string): string {
  const all = groups.flatMap((g) => g.points.map((p) => p[1]));
  const yMax = niceMax(Math.max(0, ...all));
  const n = Math.max(1, ...groups.map((g) => g.points.length));
  const plotW = W - PAD.left - PAD.right;
  const plotH = H - PAD.top - PAD.bottom;
  const x = (i: number) => PAD.left + (n === 1 ? plotW / 2 : (i / (n - 1)) * plotW);
  const y = (v: number) => PAD.top + plotH - (v / yMax) * plotH;

  const parts: string[] = [];
  parts.push(`<svg viewBox="0 0 ${W} ${H}" class="chart" role="img">`);
  // y grid + labels
  for (let g = 0; g <= 4; g++) {
    const value = (yMax / 4) * g;
    const yy = y(value);
    parts.push(`<line x1="${PAD.left}" y1="${yy}" x2="${W - PAD.right}" y2="${yy}" class="grid"/>`);
    parts.push(`<text x="${PAD.left - 8}" y="${yy + 4}" class="axis" text-anchor="end">${formatValue(value)}</text>`);
  }
  parts.push(`<text x="14" y="${PAD.top + plotH / 2}" class="axis" transform="rotate(-90 14 ${PAD.top + plotH / 2})" text-anchor="middle">${esc(unit)}</text>`);
  // x labels from the first group's buckets
  const ticks = groups[0]?.points ?? [];
  const step = Math.max(1, Math.ceil(ticks.length / 12));
  ticks.forEach(([ts], i) => {
    if (i % step !== 0 && i !== ticks.length - 1) return;
    parts.push(`<text x="${x(i)}" y="${H - 14}" class="axis" text-anchor="middle">${esc(timeLabel(ts))}</text>`);
  });

  groups.forEach((group, gi) => {
    const color = PALETTE[gi % PALETTE.length];
    if (group.points.length > 1) {
      const path = group.points.map(([, v], i) => `${i ? "L" : "M"}${x(i).toFixed(1)},${y(v).toFixed(1)}`).join("");
      parts.push(`<path d="${path}" fill="none" stroke="${color}" stroke-width="2"/>`);
    }
    group.points.forEach(([ts, v], i) => {
      parts.push(
        `<circle cx="${x(i).toFixed(1)}" cy="${y(v).toFixed(1)}" r="3" fill="${color}">` +
          `<title>${esc(group.label)} @ ${esc(ts)}: ${formatValue(v)} ${esc(unit)}</title></circle>`,
      );
    });
  });
  parts.push("</svg>");
  return parts.join("");
}

export function legendHtml(labels: string[]): string {
  return labels
    .map(
      (label, i) =>
        `<span class="legend-item"><span class="swatch" style="background:${PALETTE[i % PALETTE.length]}"></span>${esc(label)}</span>`,
    )
    .join("");
}

export function pieChart(onSeconds: number, offSeconds: number): string {
  const total = onSeconds + offSeconds;
  const onFraction = total > 0 ? onSeconds / total : 0;
  const r = 90;
  const cx = 130;
  const cy = 130;
  const angle = onFraction * 2 * Math.PI;
  const large = onFraction > 0.5 ? 1 : 0;
  const endX = cx + r * Math.sin(angle);
  const endY = cy - r * Math.cos(angle);
  const onPct = (onFraction * 100).toFixed(onFraction < 0.01 && onFraction > 0 ? 2 : 1);
  let slice: string;
  if (onFraction >= 0.9999) {
    slice = `<circle cx="${cx}" cy="${cy}" r="${r}" fill="${PALETTE[0]}"/>`;
  } else if (onFraction <= 0) {
    slice = "";
  } else {
    slice = `<path d="M${cx},${cy} L${cx},${cy - r} A${r},${r} 0 ${large} 1 ${endX.toFixed(2)},${endY.toFixed(2)} Z" fill="${PALETTE[0]}"/>`;
  }
  return (
    `<svg viewBox="0 0 260 260" class="chart pie" role="img">` +
    `<circle cx="${cx}" cy="${cy}" r="${r}" fill="#e5e7eb"><title>off: ${offSeconds}s</title></circle>` +
    slice +
    `<text x="${cx}" y="248" text-anchor="middle" class="axis">on ${onPct}% of the window</text>` +
    `</svg>`
  );
}

export function hourlyBars(values: number[], unit: string): string {
  const w = 560;
  const h = 260;
  const pad = { left: 48, right: 8, top: 12, bottom: 30 };
  const yMax = niceMax(Math.max(0, ...values));
  const plotW = w - pad.left - pad.right;
  const plotH = h - pad.top - pad.bottom;
  const barW = plotW / 24;
  const parts = [`<svg viewBox="0 0 ${w} ${h}" class="chart" role="img">`];
  for (let g = 0; g <= 4; g++) {
    const value = (yMax / 4) * g;
    const yy = pad.top + plotH - (value / yMax) * plotH;
    parts.push(`<line x1="${pad.left}" y1="${yy}" x2="${w - pad.right}" y2="${yy}" class="grid"/>`);
    parts.push(`<text x="${pad.left - 6}" y="${yy + 4}" class="axis" text-anchor="end">${formatValue(value)}</text>`);
  }
  values.forEach((v, hour) => {
    const bh = (v / yMax) * plotH;
    const xx = pad.left + hour * barW;
    parts.push(
      `<rect x="${(xx + 1).toFixed(1)}" y="${(pad.top + plotH - bh).toFixed(1)}" width="${(barW - 2).toFixed(1)}" height="${bh.toFixed(1)}" fill="${PALETTE[0]}">` +
        `<title>${String(hour).padStart(2, "0")}:00 - ${formatValue(v)} ${esc(unit)}</title></rect>`,
    );
    if (hour % 3 === 0) {
      parts.push(`<text x="${(xx + barW / 2).toFixed(1)}" y="${h - 10}" class="axis" text-anchor="middle">${hour}</text>`);
    }
  });
  parts.push("</svg>");
  return parts.join("");
}
