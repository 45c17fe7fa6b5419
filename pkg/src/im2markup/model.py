"""The full image-to-markup network: parameters plus forward passes."""

from dataclasses import dataclass

import numpy as np

from . import attention, autodiff as ad, calstm, encoder, output_head
from .dataset import BOS_ID


@dataclass
class Encoded:
    """Encoder output for a batch: a (N, L, D) and its (N, L*D) view."""

    a: ad.Tensor
    a_flat: ad.Tensor

    def repeat(self, index):
        """Select/replicate rows, e.g. one copy per beam hypothesis (no tape)."""
        a = ad.Tensor(self.a.data[index])
        return Encoded(a, ad.Tensor(self.a_flat.data[index]))


class Im2MarkupModel:
    """Parameters and forward computation for one configuration.

    Parameters are float leaves named ``<submodel>.<layer>.<kind>``.
    """

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg, seed=0):
        cfg.validate()
        rng = np.random.default_rng(seed)
        raw = {}
        raw.update(encoder.init_params(cfg, rng))
        raw.update(attention.init_params(cfg, rng))
        raw.update(calstm.init_params(cfg, rng))
        raw.update(output_head.init_params(cfg, rng))
        params = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}
        return cls(cfg, params)

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def block_sizes(self, prefix):
        return int(sum(p.size for k, p in self.params.items() if k.startswith(prefix)))

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, arrays):
        for k, v in arrays.items():
            self.params[k].data = np.array(v, dtype=self.params[k].dtype, copy=True)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def encode(self, canvases):
        """Whitened canvases (N, H, W) -> Encoded."""
        x = ad.Tensor(np.asarray(canvases, dtype=self.cfg.dtype))
        grid = encoder.cnn_encode(self.params, x, len(self.cfg.channels))
        grid = encoder.pool_features(grid, self.cfg.pool_stride)
        a = encoder.flatten_grid(grid)
        n, L, D = a.shape
        return Encoded(a, ad.reshape(a, (n, L * D)))

    def initial_state(self, enc):
        return calstm.init_state(self.params, enc.a_flat, self.cfg)

    def step(self, enc, prev_ids, state):
        """One decoder step: returns (p_t, alpha_t, new_state)."""
        e = output_head.embed(self.params, prev_ids)
        h_prev = state[-1][0]
        alpha = attention.attend(self.params, enc.a_flat, h_prev)
        z = attention.context(enc.a, alpha)
        H, state = calstm.stack_step(z, e, state, self.params)
        p = output_head.deep_output(self.params, H, z, e)
        return p, alpha, state

    def teacher_forced(self, canvases, targets):
        """Run the decoder on ground-truth prefixes.

        ``targets`` is an (N, T) id matrix; step t consumes <bos> for t = 0
        and ``targets[:, t-1]`` afterwards. Returns lists of p_t and alpha_t.
        """
        targets = np.asarray(targets)
        enc = self.encode(canvases)
        state = self.initial_state(enc)
        n, T = targets.shape
        prev = np.full(n, BOS_ID, dtype=np.int64)
        probs, alphas = [], []
        for t in range(T):
            p, alpha, state = self.step(enc, prev, state)
            probs.append(p)
            alphas.append(alpha)
            prev = targets[:, t]
        return probs, alphas
