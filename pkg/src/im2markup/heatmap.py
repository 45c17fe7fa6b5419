"""Attention heat-map overlays on the standardized canvas."""

import os

import numpy as np
from PIL import Image, ImageDraw

from .encoder import cell_window, index_map, placement
from .errors import ContractError

DARKEN = 0.7


def unflatten(alpha, cfg):
    """Scatter a flat (L,) weight vector back onto the (H', W') grid."""
    alpha = np.asarray(alpha, dtype=np.float64)
    gh, gw = cfg.grid
    if alpha.shape != (gh * gw,):
        raise ContractError(f"attention has {alpha.size} locations; the config expects a "
                            f"{gh}x{gw} grid (L = {gh * gw})")
    grid = np.zeros((gh, gw))
    for l, (h, w) in enumerate(index_map(gh, gw)):
        grid[h - 1, w - 1] = alpha[l]
    return grid


def overlay(base, alpha, cfg):
    """Darken each cell's window by ``1 - 0.7 * alpha / max(alpha)``.

    ``base`` is a uint8 canvas-sized image; returns a new uint8 array.
    """
    grid = unflatten(alpha, cfg)
    peak = grid.max()
    factor = np.ones(base.shape, dtype=np.float64)
    if peak > 0:
        for (h, w), a in np.ndenumerate(grid):
            top, left, bottom, right = cell_window(cfg, h + 1, w + 1)
            factor[top:bottom, left:right] = 1.0 - DARKEN * a / peak
    return np.clip(np.round(base.astype(np.float64) * factor), 0, 255).astype(np.uint8)


def canvas_image(image, canvas):
    """Place a raw uint8 raster on a white canvas exactly as the encoder sees it."""
    image = np.asarray(image, dtype=np.uint8)
    top, left = placement(image.shape, canvas)
    out = np.full(canvas, 255, dtype=np.uint8)
    out[top:top + image.shape[0], left:left + image.shape[1]] = image
    return out


def _annotate(img, text):
    rgb = Image.fromarray(img).convert("RGB")
    banner = Image.new("RGB", (rgb.width, 14), "white")
    ImageDraw.Draw(banner).text((2, 1), text, fill=(200, 0, 0))
    out = Image.new("RGB", (rgb.width, rgb.height + banner.height), "white")
    out.paste(banner, (0, 0))
    out.paste(rgb, (0, banner.height))
    return out


def emit_heatmaps(image, tokens, alphas, cfg, out_dir):
    """Write ``step_XXX.png`` per step and a vertical ``strip.png``; returns the paths."""
    base = canvas_image(image, cfg.canvas)
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2 or alphas.shape[1] != cfg.n_locations:
        raise ContractError(f"trace has {alphas.shape[-1] if alphas.ndim else 0} locations; "
                            f"the config expects a {cfg.grid[0]}x{cfg.grid[1]} grid "
                            f"(L = {cfg.n_locations})")
    os.makedirs(out_dir, exist_ok=True)
    frames, paths = [], []
    for t, (tok, a) in enumerate(zip(tokens, alphas)):
        frame = _annotate(overlay(base, a, cfg), f"{t}: {tok}")
        path = os.path.join(out_dir, f"step_{t:03d}.png")
        frame.save(path)
        frames.append(frame)
        paths.append(path)
    if frames:
        strip = Image.new("RGB", (frames[0].width, sum(f.height for f in frames)), "white")
        y = 0
        for f in frames:
            strip.paste(f, (0, y))
            y += f.height
        path = os.path.join(out_dir, "strip.png")
        strip.save(path)
        paths.append(path)
    return paths
