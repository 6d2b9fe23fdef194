/**
 * Execute a draw plan on a real CanvasRenderingContext2D.
 *
 * The browser-facing twin of the software rasterizer: both consume the same
 * operation lists produced by the frame builder.
 */

import { DrawOp, Style } from "./renderer.js";

function applyStroke(ctx: CanvasRenderingContext2D, style: Style) {
  ctx.strokeStyle = style.stroke ?? "#ffffff";
  ctx.lineWidth = style.width ?? 1;
  ctx.setLineDash(style.dash ?? []);
}

export function executeOnCanvas(ops: DrawOp[], ctx: CanvasRenderingContext2D): void {
  for (const op of ops) {
    switch (op.kind) {
      case "clear":
        ctx.fillStyle = op.color;
        ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
        break;
      case "image": {
        const image = new ImageData(new Uint8ClampedArray(op.data), op.w, op.h);
        const tile = new OffscreenCanvas(op.w, op.h);
        const tctx = tile.getContext("2d");
        if (!tctx) break;
        tctx.putImageData(image, 0, 0);
        ctx.imageSmoothingEnabled = false;
        ctx.drawImage(tile, op.dx, op.dy, op.dw, op.dh);
        break;
      }
      case "poly": {
        if (op.points.length === 0) break;
        ctx.beginPath();
        ctx.moveTo(op.points[0][0], op.points[0][1]);
        for (let i = 1; i < op.points.length; i++) {
          ctx.lineTo(op.points[i][0], op.points[i][1]);
        }
        if (op.close) ctx.closePath();
        if (op.style.fill) {
          ctx.fillStyle = op.style.fill;
          ctx.fill();
        }
        if (op.style.stroke) {
          applyStroke(ctx, op.style);
          ctx.stroke();
        }
        break;
      }
      case "circle":
        ctx.beginPath();
        ctx.arc(op.cx, op.cy, op.r, 0, 2 * Math.PI);
        if (op.style.fill) {
          ctx.fillStyle = op.style.fill;
          ctx.fill();
        }
        if (op.style.stroke) {
          applyStroke(ctx, op.style);
          ctx.stroke();
        }
        break;
      case "rect":
        if (op.style.fill) {
          ctx.fillStyle = op.style.fill;
          ctx.fillRect(op.x, op.y, op.w, op.h);
        }
        if (op.style.stroke) {
          applyStroke(ctx, op.style);
          ctx.strokeRect(op.x, op.y, op.w, op.h);
        }
        break;
      case "text":
        ctx.fillStyle = op.color;
        ctx.font = `${op.size}px sans-serif`;
        ctx.textAlign = "center";
        ctx.textBaseline = "middle";
        ctx.fillText(op.text, op.x, op.y);
        break;
    }
  }
}
