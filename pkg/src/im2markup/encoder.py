"""Image standardization and the convolutional encoder.

Feature tensors use NHWC layout throughout: a feature grid for a batch is
``(N, H, W, D)`` and the flattened sequence is ``(N, L, D)`` with
``l = W * (h - 1) + w`` (1-based, row-major).
"""

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError


def glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def standardize_whiten(image, canvas, dtype=np.float32):
    """Center ``image`` on a white canvas and map pixels to [-0.5, 0.5].

    Odd leftover margins put the extra pixel on the bottom/right, i.e. the
    image sits toward the top-left.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ContractError(f"expected a 2-D grayscale image, got shape {image.shape}")
    ch, cw = canvas
    h, w = image.shape
    if h > ch or w > cw:
        raise ContractError(f"image {w}x{h} exceeds canvas {cw}x{ch}")
    top, left = (ch - h) // 2, (cw - w) // 2
    out = np.full((ch, cw), 255, dtype=np.uint8)
    out[top:top + h, left:left + w] = image
    return (out.astype(dtype) / 255.0 - 0.5).astype(dtype)


def placement(image_shape, canvas):
    """(top, left) offset used by :func:`standardize_whiten`."""
    return (canvas[0] - image_shape[0]) // 2, (canvas[1] - image_shape[1]) // 2


def init_params(cfg, rng):
    dtype = np.dtype(cfg.dtype)
    params = {}
    c_in = 1
    for i, c_out in enumerate(cfg.channels):
        params[f"enc.conv{i}.w"] = glorot(rng, (3, 3, c_in, c_out), 9 * c_in, 9 * c_out, dtype)
        params[f"enc.conv{i}.b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    return params


def shape_chain(cfg):
    """Layer-by-layer (name, H, W, C) rows of the encoder, computed symbolically."""
    cfg.validate()
    h, w = cfg.canvas
    rows = [("input", h, w, 1)]
    for c in cfg.channels:
        rows.append(("conv", h, w, c))
        h, w = h // 2, w // 2
        rows.append(("maxpool", h, w, c))
    return rows


def cnn_encode(params, x, n_layers=5):
    """Whitened canvases ``(N, H, W)`` -> feature grid ``(N, H/32, W/32, C_last)``."""
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(x)
    if x.ndim == 3:
        x = ad.reshape(x, x.shape + (1,))
    n, h, w, _ = x.shape
    if h % 2 ** n_layers or w % 2 ** n_layers:
        raise ConfigError(f"canvas {h}x{w} is not divisible by {2 ** n_layers}")
    for i in range(n_layers):
        x = ad.conv2d(x, params[f"enc.conv{i}.w"]) + params[f"enc.conv{i}.b"]
        x = ad.maxpool2d(ad.tanh(x))
    return x


def pool_features(grid, stride):
    """Concatenate the feature vectors inside each ``stride`` window.

    Within a window vectors are taken in row-major order, so the output depth
    is ``S_H * S_W * D``.
    """
    sh, sw = stride
    n, gh, gw, d = grid.shape
    if sh <= 0 or sw <= 0 or gh % sh or gw % sw:
        raise ConfigError(f"pool stride {list(stride)} does not divide grid {gh}x{gw}")
    if (sh, sw) == (1, 1):
        return grid
    x = ad.reshape(grid, (n, gh // sh, sh, gw // sw, sw, d))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (n, gh // sh, gw // sw, sh * sw * d))


def flatten_grid(grid):
    n, h, w, d = grid.shape
    return ad.reshape(grid, (n, h * w, d))


def flat_index(h, w, width):
    """1-based grid coordinate -> 1-based sequence index."""
    return width * (h - 1) + w


def grid_index(l, width):
    """Inverse of :func:`flat_index`."""
    return (l - 1) // width + 1, (l - 1) % width + 1


def index_map(height, width):
    """Array ``m`` with ``m[l-1] = (h, w)`` for every flat index ``l``."""
    return np.array([grid_index(l, width) for l in range(1, height * width + 1)], dtype=np.int64)


def cell_window(cfg, h, w):
    """Canvas pixel box (top, left, bottom, right) tiled by pooled cell (h, w), 1-based."""
    sy = cfg.downsample * cfg.pool_stride[0]
    sx = cfg.downsample * cfg.pool_stride[1]
    return (h - 1) * sy, (w - 1) * sx, h * sy, w * sx


def receptive_field(n_layers=5):
    """Receptive field width in pixels of one pre-pooling grid cell."""
    rf, jump = 1, 1
    for _ in range(n_layers):
        rf += 2 * jump
        rf += jump
        jump *= 2
    return rf
