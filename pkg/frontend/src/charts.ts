/** Step-indexed canvas line chart with a threshold step-line overlay.
 *
 * X is the simulation step, never wall time. The threshold is drawn from
 * its change-points as a horizontal-then-vertical staircase so an edit
 * mid-run is visible at the exact step it landed.
 */

import type { Pt, Seg } from "./store.js";

export interface ChartStyle {
  series: string;
  threshold: string;
  grid: string;
  text: string;
  mark: string;
}

export class StepChart {
  private ctx: CanvasRenderingContext2D;

  constructor(
    private canvas: HTMLCanvasElement,
    private label: string,
    private style: ChartStyle,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  draw(pts: Pt[], segs: Seg[], marks: number[]): void {
    const dpr = window.devicePixelRatio || 1;
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    if (!w || !h) return;
    if (this.canvas.width !== w * dpr || this.canvas.height !== h * dpr) {
      this.canvas.width = w * dpr;
      this.canvas.height = h * dpr;
    }
    const ctx = this.ctx;
    ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
    ctx.clearRect(0, 0, w, h);

    const padL = 34;
    const padR = 6;
    const padT = 14;
    const padB = 14;

    let x0 = Infinity;
    let x1 = -Infinity;
    for (const p of pts) {
      if (p.step < x0) x0 = p.step;
      if (p.step > x1) x1 = p.step;
    }
    if (!Number.isFinite(x0)) {
      ctx.fillStyle = this.style.text;
      ctx.font = "10px monospace";
      ctx.fillText(`${this.label} (waiting for steps)`, padL, h / 2);
      return;
    }
    if (x1 === x0) x1 = x0 + 1;

    let y0 = Infinity;
    let y1 = -Infinity;
    for (const p of pts) {
      if (p.v < y0) y0 = p.v;
      if (p.v > y1) y1 = p.v;
    }
    for (const s of segs) {
      if (s.step <= x1) {
        if (s.v < y0) y0 = s.v;
        if (s.v > y1) y1 = s.v;
      }
    }
    if (y1 - y0 < 1e-9) {
      y0 -= 0.5;
      y1 += 0.5;
    }
    const span = y1 - y0;
    y0 -= span * 0.08;
    y1 += span * 0.08;

    const X = (s: number) => padL + ((s - x0) / (x1 - x0)) * (w - padL - padR);
    const Y = (v: number) => h - padB - ((v - y0) / (y1 - y0)) * (h - padT - padB);

    ctx.strokeStyle = this.style.grid;
    ctx.lineWidth = 1;
    ctx.beginPath();
    for (let i = 0; i <= 3; i++) {
      const gy = padT + (i / 3) * (h - padT - padB);
      ctx.moveTo(padL, gy);
      ctx.lineTo(w - padR, gy);
    }
    ctx.stroke();

    ctx.fillStyle = this.style.text;
    ctx.font = "9px monospace";
    ctx.fillText(y1.toFixed(2), 2, padT + 4);
    ctx.fillText(y0.toFixed(2), 2, h - padB);
    ctx.fillText(this.label, padL, 9);
    const xLabel = `step ${x1}`;
    ctx.fillText(xLabel, w - padR - ctx.measureText(xLabel).width, h - 3);

    // drift injection marks along the bottom edge
    ctx.strokeStyle = this.style.mark;
    ctx.beginPath();
    for (const s of marks) {
      if (s < x0 || s > x1) continue;
      const mx = X(s);
      ctx.moveTo(mx, h - padB);
      ctx.lineTo(mx, h - padB - 5);
    }
    ctx.stroke();

    if (segs.length) {
      ctx.strokeStyle = this.style.threshold;
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      let started = false;
      for (let i = 0; i < segs.length; i++) {
        const seg = segs[i];
        const sx = Math.max(seg.step, x0);
        if (sx > x1) break;
        const nextStep = i + 1 < segs.length ? Math.min(segs[i + 1].step, x1) : x1;
        if (!started) {
          ctx.moveTo(X(sx), Y(seg.v));
          started = true;
        } else {
          ctx.lineTo(X(sx), Y(seg.v));
        }
        ctx.lineTo(X(Math.max(nextStep, sx)), Y(seg.v));
      }
      ctx.stroke();
      ctx.setLineDash([]);
    }

    ctx.strokeStyle = this.style.series;
    ctx.lineWidth = 1.4;
    ctx.beginPath();
    let first = true;
    for (const p of pts) {
      const px = X(p.step);
      const py = Y(p.v);
      if (first) {
        ctx.moveTo(px, py);
        first = false;
      } else {
        ctx.lineTo(px, py);
      }
    }
    ctx.stroke();
  }
}
