"""Dependency-free figures: SVG for 1D predictions, tiled PGM for images."""
from __future__ import annotations

import os
from xml.sax.saxutils import escape

import numpy as np

from .data import read_pgm, write_pgm

WIDTH, HEIGHT, PAD = 640, 360, 40


def write_prediction(path, x_context, y_context, x_target, y_target, mu, sigma,
                     train_range=(-2.0, 2.0)) -> None:
    """Prediction dump: one header line, then ``role,x,y,mu,sigma`` rows."""
    rows = ["# kind=prediction train_range=%r:%r" % tuple(map(float, train_range)),
            "role,x,y,mu,sigma"]
    for x, y in zip(np.ravel(x_context), np.ravel(y_context)):
        rows.append(f"context,{float(x)!r},{float(y)!r},,")
    y_target = np.full(len(np.ravel(x_target)), np.nan) if y_target is None else y_target
    for x, y, m, s in zip(np.ravel(x_target), np.ravel(y_target), np.ravel(mu), np.ravel(sigma)):
        rows.append(f"target,{float(x)!r},{float(y)!r},{float(m)!r},{float(s)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def read_prediction(path) -> dict:
    with open(path) as fh:
        header = fh.readline()
        columns = fh.readline().strip().split(",")
        if not header.startswith("#") or columns != ["role", "x", "y", "mu", "sigma"]:
            raise ValueError(f"{path}: not a prediction dump")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    meta = dict(item.split("=", 1) for item in header[1:].split())
    lo, hi = (float(v) for v in meta.get("train_range", "-2.0:2.0").split(":"))

    def cols(role, names):
        sel = [r for r in rows if r[0] == role]
        idx = [columns.index(n) for n in names]
        return [np.array([float(r[i]) if r[i] else np.nan for r in sel]) for i in idx]

    xc, yc = cols("context", ["x", "y"])
    xt, yt, mu, sigma = cols("target", ["x", "y", "mu", "sigma"])
    order = np.argsort(xt)
    return {"x_context": xc, "y_context": yc, "x_target": xt[order], "y_target": yt[order],
            "mu": mu[order], "sigma": sigma[order], "train_range": (lo, hi)}


def band(mu, sigma, k=2.0):
    """Lower and upper edges of the ``mu +- k sigma`` band."""
    mu, sigma = np.asarray(mu), np.asarray(sigma)
    return mu - k * sigma, mu + k * sigma


def prediction_svg(pred: dict, title: str = "", mark_training_range=None) -> str:
    """Context dots, true curve, predictive mean and a 2 sigma band.

    The training range is drawn as dashed verticals when the data extends
    past it (or when ``mark_training_range`` is True).
    """
    xs = np.concatenate([pred["x_context"], pred["x_target"]])
    lo_b, hi_b = band(pred["mu"], pred["sigma"])
    ys = np.concatenate([pred["y_context"], pred["y_target"], lo_b, hi_b])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 1, x1 + 1
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1, y1 + 1

    def sx(x):
        return PAD + (np.asarray(x) - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def sy(y):
        return HEIGHT - PAD - (np.asarray(y) - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    def path(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(y)) if np.isfinite(b))

    xt = pred["x_target"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" '
           'fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{PAD}" y="{PAD - 12}" font-size="14">{escape(title)}</text>')
    poly = path(np.concatenate([xt, xt[::-1]]), np.concatenate([hi_b, lo_b[::-1]]))
    out.append(f'<polygon class="band" points="{poly}" fill="steelblue" fill-opacity="0.25" '
               'stroke="none"/>')
    if np.any(np.isfinite(pred["y_target"])):
        out.append(f'<polyline class="truth" points="{path(xt, pred["y_target"])}" fill="none" '
                   'stroke="black" stroke-width="1"/>')
    out.append(f'<polyline class="mean" points="{path(xt, pred["mu"])}" fill="none" '
               'stroke="steelblue" stroke-width="2"/>')
    for x, y in zip(sx(pred["x_context"]), sy(pred["y_context"])):
        out.append(f'<circle class="context" cx="{x:.2f}" cy="{y:.2f}" r="3" fill="black"/>')
    lo, hi = pred["train_range"]
    if mark_training_range is None:
        mark_training_range = x0 < lo - 1e-9 or x1 > hi + 1e-9
    if mark_training_range:
        for v in (lo, hi):
            if x0 <= v <= x1:
                out.append(f'<line class="train-range" x1="{sx(v):.2f}" y1="{PAD}" '
                           f'x2="{sx(v):.2f}" y2="{HEIGHT - PAD}" stroke="gray" '
                           'stroke-dasharray="6,4"/>')
    for v, label in ((x0, f"{x0:.2f}"), (x1, f"{x1:.2f}")):
        out.append(f'<text x="{sx(v):.2f}" y="{HEIGHT - PAD + 16}" font-size="11" '
                   f'text-anchor="middle">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_prediction_file(src, dst, **kw) -> None:
    with open(dst, "w") as fh:
        fh.write(prediction_svg(read_prediction(src), **kw))


def tile_images(images, gap=2, value=0.5) -> np.ndarray:
    """Lay equally sized images out left to right with a gray gap."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("nothing to tile")
    h = max(im.shape[0] for im in images)
    cols = []
    for k, im in enumerate(images):
        pad = np.full((h, im.shape[1]), value)
        pad[:im.shape[0]] = im
        cols.append(pad)
        if k < len(images) - 1:
            cols.append(np.full((h, gap), value))
    return np.concatenate(cols, axis=1)


def tile_directory(src_dir, dst, order=("context", "truth", "mean")) -> list[str]:
    """Tile the PGMs of a completion directory; known names come first."""
    skip = os.path.abspath(dst)
    names = sorted(f for f in os.listdir(src_dir)
                   if f.endswith(".pgm") and os.path.abspath(os.path.join(src_dir, f)) != skip)
    if not names:
        raise FileNotFoundError(f"no PGM files in {src_dir}")
    rank = {n: i for i, n in enumerate(order)}
    names.sort(key=lambda f: (rank.get(f[:-4], len(rank)), f))
    write_pgm(dst, tile_images([read_pgm(os.path.join(src_dir, f)) for f in names]))
    return names
