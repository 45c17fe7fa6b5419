"""Peephole LSTM stack conditioned on the attention context, plus the init model.

A stack state is a list of ``(h, c)`` pairs, one per layer, bottom first.
"""

import numpy as np

from . import autodiff as ad
from .encoder import glorot
from .errors import ContractError


def init_params(cfg, rng):
    dtype = np.dtype(cfg.dtype)
    n = cfg.n_units
    params = {}
    in_dim = cfg.feature_dim + cfg.embed_dim
    for q in range(1, cfg.n_layers + 1):
        p = f"lstm{q}"
        params[f"{p}.wx"] = glorot(rng, (in_dim, 4 * n), in_dim, n, dtype)
        params[f"{p}.wh"] = glorot(rng, (n, 4 * n), n, n, dtype)
        b = np.zeros(4 * n, dtype=dtype)
        b[n:2 * n] = cfg.forget_bias
        params[f"{p}.b"] = b
        for gate in ("ci", "cf", "co"):
            params[f"{p}.w{gate}"] = np.zeros(n, dtype=dtype)
        in_dim = n
    if cfg.init_mode == "learned":
        k = cfg.init_hidden
        ld = cfg.n_locations * cfg.feature_dim
        params["init.hidden.w"] = glorot(rng, (ld, k), ld, k, dtype)
        params["init.hidden.b"] = np.zeros(k, dtype=dtype)
        for q in range(1, cfg.n_layers + 1):
            for part in ("c", "h"):
                params[f"init.{part}{q}.w"] = glorot(rng, (k, n), k, n, dtype)
                params[f"init.{part}{q}.b"] = np.zeros(n, dtype=dtype)
    return params


def lstm_cell_step(x, h, c, params, prefix):
    """One peephole LSTM step.

    Gate pre-activations come from a single fused projection ordered
    (input, forget, cell, output). The input and forget gates peek at the
    previous cell state, the output gate at the new one; peephole weights
    are diagonal.
    """
    wx = params[f"{prefix}.wx"]
    if x.shape[-1] != wx.shape[0] or h.shape[-1] * 4 != wx.shape[1]:
        raise ContractError(f"{prefix}: input {x.shape} / state {h.shape} vs weights {wx.shape}")
    n = h.shape[-1]
    gates = x @ wx + h @ params[f"{prefix}.wh"] + params[f"{prefix}.b"]
    i = ad.sigmoid(gates[:, :n] + params[f"{prefix}.wci"] * c)
    f = ad.sigmoid(gates[:, n:2 * n] + params[f"{prefix}.wcf"] * c)
    c_new = f * c + i * ad.tanh(gates[:, 2 * n:3 * n])
    o = ad.sigmoid(gates[:, 3 * n:] + params[f"{prefix}.wco"] * c_new)
    return o * ad.tanh(c_new), c_new


def stack_step(z, e_prev, state, params):
    """Advance every layer one step; returns (H_t, new_state).

    Layer 1 reads [z_t; E y_{t-1}], layer q reads h^{q-1}_t. No skip or
    residual connections between layers.
    """
    if not state:
        raise ContractError("stack_step needs at least one layer")
    x = ad.concat([z, e_prev], axis=-1)
    new_state = []
    for q, (h, c) in enumerate(state, 1):
        h, c = lstm_cell_step(x, h, c, params, f"lstm{q}")
        new_state.append((h, c))
        x = h
    return x, new_state


def init_state(params, a_flat, cfg):
    """Initial stack state C_0 from the whole flattened image (or zeros)."""
    n_batch = a_flat.shape[0]
    n = cfg.n_units
    if cfg.init_mode == "zeros":
        zero = ad.Tensor(np.zeros((n_batch, n), dtype=a_flat.dtype))
        return [(zero, zero) for _ in range(cfg.n_layers)]
    hidden = ad.tanh(a_flat @ params["init.hidden.w"] + params["init.hidden.b"])
    state = []
    for q in range(1, cfg.n_layers + 1):
        h = ad.tanh(hidden @ params[f"init.h{q}.w"] + params[f"init.h{q}.b"])
        c = ad.tanh(hidden @ params[f"init.c{q}.w"] + params[f"init.c{q}.b"])
        state.append((h, c))
    return state


def flat_state(state):
    """Stack state as C_t = (c^1..c^Q, h^1..h^Q)."""
    return [c for _, c in state] + [h for h, _ in state]
