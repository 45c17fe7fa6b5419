"""Token embedding and the deep output layer.

The softmax runs over every id except <pad>: output column ``j`` is token
id ``j + 1``.
"""

import numpy as np

from . import autodiff as ad
from .dataset import PAD_ID
from .encoder import glorot
from .errors import ContractError


def init_params(cfg, rng):
    dtype = np.dtype(cfg.dtype)
    V, m = cfg.vocab_size, cfg.embed_dim
    params = {"emb.E": glorot(rng, (V, m), V, m, dtype)}
    params["emb.E"][PAD_ID] = 0.0
    sizes = [cfg.n_units + cfg.feature_dim + m, *cfg.out_units, cfg.n_outputs]
    for name, fan_in, fan_out in zip(["out.fc1", "out.fc2", "out.out"], sizes[:-1], sizes[1:]):
        params[f"{name}.w"] = glorot(rng, (fan_in, fan_out), fan_in, fan_out, dtype)
        params[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
    return params


def id_to_column(ids):
    return np.asarray(ids) - 1


def column_to_id(cols):
    return np.asarray(cols) + 1


def embed(params, ids):
    """Rows of E for ``ids`` (any integer array)."""
    E = params["emb.E"]
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise ContractError(f"embed: token id out of range [0, {E.shape[0]})")
    return ad.embedding(E, ids)


def deep_output(params, H, z, e_prev):
    """p_t over the K non-pad tokens from [H_t; z_t; E y_{t-1}]."""
    w1 = params["out.fc1.w"]
    width = H.shape[-1] + z.shape[-1] + e_prev.shape[-1]
    if width != w1.shape[0]:
        raise ContractError(f"deep_output: input width {width} != built width {w1.shape[0]}")
    x = ad.concat([H, z, e_prev], axis=-1)
    x = ad.tanh(x @ w1 + params["out.fc1.b"])
    x = ad.tanh(x @ params["out.fc2.w"] + params["out.fc2.b"])
    return ad.softmax(x @ params["out.out.w"] + params["out.out.b"])
