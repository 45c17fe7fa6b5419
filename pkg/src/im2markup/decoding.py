"""Inference: beam search, best-path (greedy) decoding and ancestral sampling.

Scores are total log-probabilities without length normalisation. Ties
between equal scores go to the lexicographically smaller id sequence.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dataset import BOS_ID, EOS_ID
from .output_head import column_to_id


@dataclass
class Hypothesis:
    ids: tuple = ()
    logprob: float = 0.0
    alphas: list = field(default_factory=list)
    finished: bool = False

    @property
    def sort_key(self):
        return (-self.logprob, self.ids)

    def trace(self):
        return np.array(self.alphas) if self.alphas else np.zeros((0, 0))


def strip_eos(ids):
    """Ids up to (excluding) the first <eos>, as a list of ints."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            break
        out.append(i)
    return out


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p.data.astype(np.float64))


def _select_rows(state, rows):
    return [(ad.Tensor(h.data[rows]), ad.Tensor(c.data[rows])) for h, c in state]


def beam_search(model, canvas, beam_width=10, max_len=160):
    """Most probable sequence found by a width-limited breadth-first search.

    Each live hypothesis proposes its ``beam_width`` best successors; the best
    ``beam_width`` candidates overall survive, and those ending in <eos> move
    to the finished pool. Search stops when no hypothesis is live, when the
    pool already holds a strictly better score than every live hypothesis
    (scores only decrease), or at ``max_len`` where live hypotheses are
    force-finished.
    """
    if beam_width < 1 or max_len < 1:
        raise ValueError("beam_width and max_len must be >= 1")
    with ad.no_grad():
        enc0 = model.encode(np.asarray(canvas)[None])
        state = model.initial_state(enc0)
        live = [Hypothesis()]
        pool = []
        for _ in range(max_len):
            enc = enc0.repeat(np.zeros(len(live), dtype=np.int64))
            prev = np.array([h.ids[-1] if h.ids else BOS_ID for h in live], dtype=np.int64)
            p, alpha, new_state = model.step(enc, prev, state)
            logp = _log(p)
            K = logp.shape[1]
            cands = []
            for b, hyp in enumerate(live):
                order = np.lexsort((np.arange(K), -logp[b]))[:beam_width]
                for col in order:
                    cands.append((hyp.logprob + logp[b, col], hyp.ids + (int(column_to_id(col)),), b))
            cands.sort(key=lambda c: (-c[0], c[1]))
            next_live, rows = [], []
            for score, ids, b in cands[:beam_width]:
                hyp = Hypothesis(ids, float(score), live[b].alphas + [alpha.data[b].copy()])
                if ids[-1] == EOS_ID:
                    hyp.finished = True
                    pool.append(hyp)
                else:
                    next_live.append(hyp)
                    rows.append(b)
            live = next_live
            if not live:
                break
            state = _select_rows(new_state, np.array(rows))
            if pool and max(h.logprob for h in pool) > max(h.logprob for h in live):
                break
        else:
            pool.extend(live)
    return min(pool, key=lambda h: h.sort_key)


def bestpath_decode(model, canvases, max_len=160):
    """Greedy per-step argmax decoding for a batch of canvases.

    Returns one :class:`Hypothesis` per canvas, truncated after its first
    <eos> (or at ``max_len``).
    """
    canvases = np.asarray(canvases)
    if canvases.ndim == 2:
        canvases = canvases[None]
    n = canvases.shape[0]
    hyps = [Hypothesis() for _ in range(n)]
    with ad.no_grad():
        enc = model.encode(canvases)
        state = model.initial_state(enc)
        prev = np.full(n, BOS_ID, dtype=np.int64)
        active = np.ones(n, dtype=bool)
        for _ in range(max_len):
            p, alpha, state = model.step(enc, prev, state)
            logp = _log(p)
            cols = logp.argmax(axis=1)
            prev = column_to_id(cols).astype(np.int64)
            for i in np.flatnonzero(active):
                h = hyps[i]
                h.ids += (int(prev[i]),)
                h.logprob += float(logp[i, cols[i]])
                h.alphas.append(alpha.data[i].copy())
                if prev[i] == EOS_ID:
                    h.finished = True
                    active[i] = False
            if not active.any():
                break
    return hyps


def sample_sequence(model, canvas, seed=0, max_len=160):
    """Ancestral sample from p_t until <eos>; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    hyp = Hypothesis()
    with ad.no_grad():
        enc = model.encode(np.asarray(canvas)[None])
        state = model.initial_state(enc)
        prev = np.array([BOS_ID])
        for _ in range(max_len):
            p, alpha, state = model.step(enc, prev, state)
            col = sample_index(p.data[0], rng)
            tok = int(column_to_id(col))
            hyp.ids += (tok,)
            hyp.logprob += float(_log(p)[0, col])
            hyp.alphas.append(alpha.data[0].copy())
            if tok == EOS_ID:
                hyp.finished = True
                break
            prev = np.array([tok])
    return hyp


def sample_index(p, rng):
    """Inverse-CDF draw of one index from probability vector ``p``."""
    cdf = np.cumsum(np.asarray(p, dtype=np.float64))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
