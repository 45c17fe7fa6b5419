"""Soft visual attention over the flattened feature sequence."""

import json

import numpy as np

from . import autodiff as ad
from .encoder import glorot
from .errors import ContractError


def init_params(cfg, rng):
    dtype = np.dtype(cfg.dtype)
    L, D, n = cfg.n_locations, cfg.feature_dim, cfg.n_units
    sizes = [L * D + n, *cfg.att_units, L]
    names = ["att.fc1", "att.fc2", "att.out"]
    params = {}
    for name, fan_in, fan_out in zip(names, sizes[:-1], sizes[1:]):
        params[f"{name}.w"] = glorot(rng, (fan_in, fan_out), fan_in, fan_out, dtype)
        params[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
    return params


def attend(params, a_flat, h_prev):
    """Attention weights alpha_t over the L locations.

    Parameters
    ----------
    a_flat : Tensor, shape (N, L*D)
        The whole encoded image, every location concatenated.
    h_prev : Tensor, shape (N, n)
        Top LSTM activation from the previous step.

    Returns
    -------
    Tensor, shape (N, L); each row is a probability vector.
    """
    w1 = params["att.fc1.w"]
    if a_flat.shape[-1] + h_prev.shape[-1] != w1.shape[0]:
        raise ContractError(
            f"attend: features {a_flat.shape} + state {h_prev.shape} do not match "
            f"the built input width {w1.shape[0]}"
        )
    x = ad.concat([a_flat, h_prev], axis=-1)
    x = ad.tanh(x @ w1 + params["att.fc1.b"])
    x = ad.tanh(x @ params["att.fc2.w"] + params["att.fc2.b"])
    return ad.softmax(x @ params["att.out.w"] + params["att.out.b"])


def context(a, alpha):
    """Expected feature vector z_t = sum_l alpha_l a_l.

    ``a`` is (N, L, D) and ``alpha`` is (N, L); returns (N, D).
    """
    if a.shape[:2] != alpha.shape:
        raise ContractError(f"context: features {a.shape} vs weights {alpha.shape}")
    n, L = alpha.shape
    z = ad.matmul(ad.reshape(alpha, (n, 1, L)), a)
    return ad.reshape(z, (n, a.shape[2]))


def cumulative(alphas):
    """Per-location attention summed over decode steps, shape (L,)."""
    return np.asarray(alphas).sum(axis=0)


def focal_region(alpha, threshold=None):
    """Boolean mask of locations carrying attention above 1/(4L)."""
    alpha = np.asarray(alpha)
    if threshold is None:
        threshold = 1.0 / (4 * alpha.shape[-1])
    return alpha > threshold


def write_trace(path, tokens, alphas):
    """Write one JSON line per decode step: {step, token, alpha}."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, (tok, a) in enumerate(zip(tokens, alphas)):
            fh.write(json.dumps({"step": t, "token": tok,
                                 "alpha": [float(x) for x in np.ravel(a)]}) + "\n")


def read_trace(path):
    """Inverse of :func:`write_trace`; returns (tokens, alphas (T, L))."""
    tokens, alphas = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                tokens.append(rec["token"])
                alphas.append(rec["alpha"])
    widths = {len(a) for a in alphas}
    if len(widths) > 1:
        raise ContractError(f"trace rows have differing lengths {sorted(widths)}")
    return tokens, np.array(alphas, dtype=np.float64).reshape(len(alphas), -1)
