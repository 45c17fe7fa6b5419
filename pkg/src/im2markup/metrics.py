"""Corpus BLEU, per-word edit distance and the whitespace-free visual match."""

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

MAX_SHIFT = 5
INK_THRESHOLD = 128


def _tokens(seq):
    return seq.split() if isinstance(seq, str) else list(seq)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_order=4):
    """Corpus-level BLEU with uniform weights over 1..max_order grams.

    Clipped n-gram matches and candidate n-gram counts are summed over the
    corpus before taking precisions; the brevity penalty compares total
    candidate and reference lengths. No smoothing: any order with zero
    matches scores 0. An order for which neither side has any n-gram (all
    sequences shorter than n) is left out of the geometric mean.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    ref_totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        if not ref:
            raise ValueError("empty reference")
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
            ref_totals[n - 1] += max(len(ref) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = []
    for m, t, rt in zip(matches, totals, ref_totals):
        if t == 0 and rt == 0:
            continue
        if m == 0:
            return 0.0
        log_p.append(math.log(m / t))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(sum(log_p) / len(log_p))


def levenshtein(a, b):
    """Word-level Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = _tokens(a), _tokens(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def edit_distance(hyp, ref):
    """Levenshtein distance divided by the reference length."""
    ref = _tokens(ref)
    if not ref:
        raise ValueError("edit_distance needs a non-empty reference")
    return levenshtein(hyp, ref) / len(ref)


def _strip_white_columns(image):
    ink = np.asarray(image) < INK_THRESHOLD
    return ink[:, ink.any(axis=0)]


def visual_match(image_a, image_b, max_shift=MAX_SHIFT):
    """Binary pixel match ignoring white columns, up to ``max_shift`` px per axis.

    Both images are binarised at 128, all-white columns are dropped, and the
    ink masks must coincide exactly under some translation with
    ``|dx|, |dy| <= max_shift``.
    """
    a, b = _strip_white_columns(image_a), _strip_white_columns(image_b)
    if not a.any() or not b.any():
        return not a.any() and not b.any()
    ya, xa = np.nonzero(a)
    yb, xb = np.nonzero(b)
    if ya.size != yb.size:
        return False
    set_b = set(zip(yb.tolist(), xb.tolist()))
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            if all((y + dy, x + dx) in set_b for y, x in zip(ya.tolist(), xa.tolist())):
                return True
    return False


@dataclass
class CorpusScore:
    bleu: float
    mean_edit_distance: float
    visual_match_rate: float = None
    n: int = 0

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


def corpus_score(hypotheses, references, images_a=None, images_b=None):
    eds = [edit_distance(h, r) for h, r in zip(hypotheses, references)]
    score = CorpusScore(corpus_bleu(hypotheses, references), float(np.mean(eds)), n=len(eds))
    if images_a is not None and images_b is not None:
        hits = [visual_match(a, b) for a, b in zip(images_a, images_b)]
        score.visual_match_rate = float(np.mean(hits)) if hits else 0.0
    return score
