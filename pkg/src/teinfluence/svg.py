"""Plain-text SVG plots: the per-experiment analysis figure and the cluster overlay.

Output depends only on the input arrays, so repeated runs produce identical
bytes.  Coordinates are written with two decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


@dataclass
class Panel:
    """A rectangular plot area with linear data-to-pixel mapping."""

    x0: float
    y0: float
    width: float
    height: float
    xlim: tuple[float, float]
    ylim: tuple[float, float]

    def px(self, x) -> np.ndarray:
        lo, hi = self.xlim
        span = hi - lo if hi > lo else 1.0
        return self.x0 + (np.asarray(x, dtype=np.float64) - lo) / span * self.width

    def py(self, y) -> np.ndarray:
        lo, hi = self.ylim
        span = hi - lo if hi > lo else 1.0
        return self.y0 + self.height - (np.asarray(y, dtype=np.float64) - lo) / span * self.height

    def frame(self, title: str, ylabel: str = "") -> list[str]:
        out = [
            f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.width)}" height="{_f(self.height)}" '
            'fill="none" stroke="#444" stroke-width="0.8"/>',
            f'<text x="{_f(self.x0)}" y="{_f(self.y0 - 6)}" font-size="12">{escape(title)}</text>',
        ]
        for frac in (0.0, 0.5, 1.0):
            v = self.ylim[0] + frac * (self.ylim[1] - self.ylim[0])
            y = self.py(v)
            out.append(
                f'<text x="{_f(self.x0 - 4)}" y="{_f(y + 3)}" font-size="9" text-anchor="end">{v:.3g}</text>'
            )
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            v = self.xlim[0] + frac * (self.xlim[1] - self.xlim[0])
            x = self.px(v)
            out.append(
                f'<text x="{_f(x)}" y="{_f(self.y0 + self.height + 12)}" font-size="9" '
                f'text-anchor="middle">{v:.4g}</text>'
            )
        if ylabel:
            out.append(
                f'<text x="{_f(self.x0 - 40)}" y="{_f(self.y0 + self.height / 2)}" font-size="10" '
                f'transform="rotate(-90 {_f(self.x0 - 40)} {_f(self.y0 + self.height / 2)})" '
                f'text-anchor="middle">{escape(ylabel)}</text>'
            )
        return out

    def line(self, x, y, color: str, width: float = 1.0, opacity: float = 1.0) -> str:
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(x), self.py(y)))
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity}"/>'
        )

    def band(self, x, lo, hi, color: str, opacity: float = 0.2) -> str:
        xs = self.px(x)
        top = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs, self.py(hi)))
        bottom = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs[::-1], self.py(lo)[::-1]))
        return f'<polygon points="{top} {bottom}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>'

    def markers(self, x, y, color: str, r: float = 3.0) -> list[str]:
        return [
            f'<circle cx="{_f(a)}" cy="{_f(b)}" r="{r}" fill="{color}"/>' for a, b in zip(self.px(x), self.py(y))
        ]


def _limits(*arrays, pad: float = 0.05) -> tuple[float, float]:
    vals = np.concatenate([np.ravel(np.asarray(a, dtype=np.float64)) for a in arrays if np.size(a)] or [np.zeros(1)])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    d = (hi - lo) * pad
    return lo - d, hi + d


def _document(width: int, height: int, body: Sequence[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def legend(x: float, y: float, entries: Sequence[tuple[str, str]]) -> list[str]:
    out = []
    for i, (label, color) in enumerate(entries):
        yy = y + 12 * i
        out.append(f'<rect x="{_f(x)}" y="{_f(yy - 7)}" width="10" height="3" fill="{color}"/>')
        out.append(f'<text x="{_f(x + 14)}" y="{_f(yy - 2)}" font-size="9">{escape(label)}</text>')
    return out


def analysis_figure(
    title: str,
    time_s: np.ndarray,
    actions: np.ndarray,
    action_names: Sequence[str],
    depth: np.ndarray,
    pred_time_s: np.ndarray,
    full_mean: np.ndarray,
    full_std: np.ndarray,
    masked_mean: np.ndarray,
    masked_std: np.ndarray,
    te_time_s: np.ndarray,
    te_raw: np.ndarray,
    te_smoothed: np.ndarray,
    peak_time_s: np.ndarray,
    peak_values: np.ndarray,
) -> str:
    """Three stacked panels: actions, depth with both predictions (±3σ), and TE with its peaks."""
    W, H = 1200, 720
    left, width, height = 70.0, 1000.0, 170.0
    xlim = (float(time_s[0]), float(time_s[-1])) if len(time_s) else (0.0, 1.0)
    body = [f'<text x="{left}" y="18" font-size="14">{escape(title)}</text>']

    p1 = Panel(left, 40.0, width, height, xlim, _limits(actions, np.array([0.0, 1.0])))
    body += p1.frame("actions (normalized)", "action")
    entries = []
    for j, name in enumerate(action_names):
        color = PALETTE[j % len(PALETTE)]
        body.append(p1.line(time_s, actions[:, j], color))
        entries.append((name, color))
    body += legend(left + width + 10, 50.0, entries)

    k = 3.0
    p2 = Panel(
        left,
        270.0,
        width,
        height,
        xlim,
        _limits(depth, full_mean - k * full_std, full_mean + k * full_std, masked_mean - k * masked_std, masked_mean + k * masked_std),
    )
    body += p2.frame("depth: observed, full and masked predictions (±3 std)", "depth")
    body.append(p2.band(pred_time_s, masked_mean - k * masked_std, masked_mean + k * masked_std, PALETTE[1], 0.18))
    body.append(p2.band(pred_time_s, full_mean - k * full_std, full_mean + k * full_std, PALETTE[0], 0.25))
    body.append(p2.line(time_s, depth, "#000000", 0.8))
    body.append(p2.line(pred_time_s, masked_mean, PALETTE[1], 0.8))
    body.append(p2.line(pred_time_s, full_mean, PALETTE[0], 0.8))
    body += legend(left + width + 10, 280.0, [("observed", "#000000"), ("full", PALETTE[0]), ("masked", PALETTE[1])])

    p3 = Panel(left, 500.0, width, height, xlim, _limits(te_raw, te_smoothed, np.zeros(1)))
    body += p3.frame("transfer entropy (nats)", "TE")
    body.append(p3.line(xlim, (0.0, 0.0), "#999999", 0.6))
    body.append(p3.line(te_time_s, te_raw, "#bbbbbb", 0.6))
    body.append(p3.line(te_time_s, te_smoothed, PALETTE[2], 1.2))
    body += p3.markers(peak_time_s, peak_values, PALETTE[1])
    body += legend(left + width + 10, 510.0, [("raw", "#bbbbbb"), ("smoothed", PALETTE[2]), ("peak", PALETTE[1])])
    body.append(f'<text x="{left + width / 2}" y="{H - 20}" font-size="11" text-anchor="middle">time (s)</text>')
    return _document(W, H, body)


def cluster_figure(title: str, sequences: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> str:
    """One panel per cluster: member sequences faint, the centroid bold."""
    sequences = np.asarray(sequences, dtype=np.float64)
    k = centroids.shape[0]
    W = 420 * max(k, 1) + 40
    H = 320
    body = [f'<text x="40" y="18" font-size="14">{escape(title)}</text>']
    length = sequences.shape[1] if sequences.ndim == 2 and sequences.shape[0] else centroids.shape[1]
    x = np.arange(length)
    ylim = _limits(sequences, centroids, np.array([0.0, 1.0]))
    for c in range(k):
        panel = Panel(60.0 + 420 * c, 50.0, 360.0, 220.0, (0.0, max(length - 1, 1)), ylim)
        members = sequences[assignments == c] if sequences.size else np.zeros((0, length))
        color = PALETTE[c % len(PALETTE)]
        body += panel.frame(f"cluster {c} (n={members.shape[0]})", "value" if c == 0 else "")
        for s in members:
            body.append(panel.line(x, s, color, 0.6, 0.25))
        body.append(panel.line(x, centroids[c], "#000000", 2.0))
        body.append(
            f'<text x="{_f(panel.x0 + panel.width / 2)}" y="{_f(panel.y0 + panel.height + 28)}" '
            'font-size="10" text-anchor="middle">frame offset</text>'
        )
    return _document(W, H, body)
