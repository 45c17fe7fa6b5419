"""Training objective and the optimisation loop.

J = per-word NLL + lambda_R * R + lambda_A * (ASE_N - ASE_T), averaged over
the samples of a batch (the L2 term is added once).
"""

import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .dataset import collate, make_buckets
from .decoding import bestpath_decode, beam_search, strip_eos
from .encoder import standardize_whiten
from .errors import ConfigError, NumericError
from .metrics import corpus_bleu
from .output_head import column_to_id, id_to_column

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-30
clamp_events = {"count": 0}


def sequence_nll(probs, targets, lengths=None):
    """Per-word negative log-likelihood -(1/tau) sum_t log p_t(y_t).

    Parameters
    ----------
    probs : list of Tensor
        One (N, K) distribution per step (or (K,) for a single sequence).
    targets : array of int, shape (N, T) or (T,)
        Target ids; positions at or beyond ``lengths`` are ignored.
    lengths : array of int, optional
        Per-sample tau. Defaults to T.

    Returns
    -------
    Tensor of shape (N,), or a scalar for a single sequence.
    """
    single = probs[0].ndim == 1
    targets = np.atleast_2d(np.asarray(targets))
    if single:
        probs = [ad.reshape(p, (1, p.shape[0])) for p in probs]
    n, T = targets.shape
    if len(probs) < T:
        raise ValueError(f"sequence_nll: {len(probs)} distributions for {T} targets")
    lengths = np.full(n, T) if lengths is None else np.asarray(lengths)
    if np.any(lengths < 1):
        raise ValueError("sequence_nll needs tau >= 1")
    K = probs[0].shape[1]
    rows = np.arange(n)
    dtype = probs[0].dtype
    total = None
    for t in range(T):
        live = t < lengths
        cols = np.where(live, id_to_column(targets[:, t]), 0)
        onehot = np.zeros((n, K), dtype=dtype)
        onehot[rows, cols] = 1.0
        picked = ad.sum_(probs[t] * onehot, axis=-1)
        small = live & (picked.data < PROB_FLOOR)
        if small.any():
            clamp_events["count"] += int(small.sum())
            log.warning("clamped %d target probabilities at %g", int(small.sum()), PROB_FLOOR)
        weight = np.where(live, 1.0 / lengths, 0.0).astype(dtype)
        term = ad.log(ad.clamp_min(picked, PROB_FLOOR)) * weight
        total = term if total is None else total + term
    nll = -total
    return ad.reshape(nll, ()) if single else nll


def ase_penalty(alphas, lengths=None, ase_target=0.0):
    """Alpha-squared-error penalty A = ASE_N - ASE_T.

    ``alphas`` is a list of (N, L) Tensors (or an (T, L) / (N, T, L) array).
    Returns ``(A, ASE_N)``, both of shape (N,).
    """
    if not isinstance(alphas, (list, tuple)):
        arr = np.asarray(alphas, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        alphas = [ad.Tensor(arr[:, t]) for t in range(arr.shape[1])]
    n, L = alphas[0].shape
    if L < 2:
        raise ConfigError("ASE needs at least 2 attention locations")
    T = len(alphas)
    lengths = np.full(n, T) if lengths is None else np.asarray(lengths)
    dtype = alphas[0].dtype
    # sum_t (alpha_t - 1/L) equals alpha_l - tau/L and is exactly 0 for uniform rows
    dev = None
    for t in range(T):
        w = (t < lengths).astype(dtype)[:, None]
        term = (alphas[t] - 1.0 / L) * w
        dev = term if dev is None else dev + term
    tau = lengths.astype(dtype)
    ase = ad.sum_(dev * dev, axis=-1)
    ase_n = ase * (100.0 / (tau * tau * (L - 1) / L))
    return ase_n - ase_target, ase_n


def ase_normalized(alphas):
    """ASE_N of one (tau, L) attention trace as a float."""
    _, ase_n = ase_penalty(np.asarray(alphas, dtype=np.float64))
    return float(ase_n.data[0])


def l2_reg(params):
    """R = 1/2 * sum of squares over every parameter, as one fused op."""
    inputs = tuple(params.values())
    value = 0.5 * sum(float(np.vdot(p.data, p.data)) for p in inputs)
    dtype = inputs[0].dtype

    def bw(g):
        return tuple(g * p.data for p in inputs)

    return ad.apply_op("l2", np.asarray(value, dtype=dtype), inputs, bw)


@dataclass
class LossBreakdown:
    per_word_nll: float
    l2_term: float
    ase_penalty: float
    ase_n: float
    total: float


def objective(model, batch, tcfg):
    """Teacher-forced J for a batch; returns (J, LossBreakdown, probs)."""
    probs, alphas = model.teacher_forced(batch.images, batch.targets)
    nll = ad.mean(sequence_nll(probs, batch.targets, batch.lengths))
    J = nll
    l2_value = 0.0
    if tcfg.lambda_r > 0:
        R = l2_reg(model.params)
        l2_value = float(R.item())
        J = J + R * tcfg.lambda_r
    if tcfg.lambda_a > 0:
        A, ase_n = ase_penalty(alphas, batch.lengths, tcfg.ase_target)
        A = ad.mean(A)
        J = J + A * tcfg.lambda_a
        a_value, ase_value = float(A.item()), float(ase_n.data.mean())
    else:
        with ad.no_grad():
            A, ase_n = ase_penalty([ad.Tensor(a.data) for a in alphas], batch.lengths, tcfg.ase_target)
        a_value, ase_value = float(A.data.mean()), float(ase_n.data.mean())
    parts = LossBreakdown(float(nll.item()), l2_value, a_value, ase_value, float(J.item()))
    return J, parts, probs


def teacher_forced_predictions(probs, lengths):
    """Per-step argmax of teacher-forced p_t, cut at the first <eos>."""
    cols = np.stack([p.data.argmax(axis=-1) for p in probs], axis=1)
    ids = column_to_id(cols)
    return [strip_eos(row) for row in ids]


@dataclass
class SampleSet:
    """Standardized canvases with their target id sequences (each ending in <eos>)."""

    canvases: np.ndarray
    targets: list

    def __len__(self):
        return len(self.targets)

    @property
    def lengths(self):
        return [len(t) for t in self.targets]

    @classmethod
    def from_images(cls, images, token_strings, vocab, canvas, dtype="float32"):
        """Standardize raw uint8 rasters and encode their token strings."""
        canvases = np.stack([standardize_whiten(im, canvas, dtype) for im in images]) \
            if len(images) else np.zeros((0, *canvas), dtype=dtype)
        return cls(canvases, [vocab.encode_target(t) for t in token_strings])


def decode_set(model, samples, beam_width, max_len, batch_size=64):
    """Decode every canvas; width 1 uses batched best-path decoding."""
    out = []
    if beam_width == 1:
        for s in range(0, len(samples), batch_size):
            res = bestpath_decode(model, samples.canvases[s:s + batch_size], max_len)
            out.extend(strip_eos(r.ids) for r in res)
    else:
        for canvas in samples.canvases:
            out.append(strip_eos(beam_search(model, canvas, beam_width, max_len).ids))
    return out


def set_bleu(model, samples, beam_width, max_len):
    hyps = decode_set(model, samples, beam_width, max_len)
    refs = [strip_eos(t) for t in samples.targets]
    return corpus_bleu(hyps, refs), hyps


class TrainingAborted(RuntimeError):
    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"training aborted at step {step}: {cause}")


@dataclass
class TrainResult:
    steps: int = 0
    epochs: int = 0
    best_step: int = 0
    best_valid_bleu: float = -1.0
    history: list = field(default_factory=list)
    best_params: dict = None


def _grads_finite(params):
    return all(p.grad is None or np.all(np.isfinite(p.grad)) for p in params.values())


def train(model, tcfg, train_set, valid_set=None, out_dir=None, log_path=None, vocab=None):
    """Minimise J with ADAM over length-bucketed minibatches.

    Every ``eval_period`` steps (and after the final step) the training BLEU
    over the last ``bleu_window`` batches and the validation BLEU are
    computed; the parameters with the best validation BLEU are kept in
    ``TrainResult.best_params`` and, with ``out_dir``, written to
    ``best.ckpt``. When ``valid_set`` is empty the training set is used.
    """
    tcfg.validate()
    if valid_set is None or len(valid_set) == 0:
        valid_set = train_set
    rng = np.random.default_rng(tcfg.seed)
    state = ad.AdamState.for_params(model.params, lr=tcfg.lr, beta1=tcfg.beta1,
                                    beta2=tcfg.beta2, eps=tcfg.eps)
    window = deque(maxlen=tcfg.bleu_window)
    result = TrainResult()
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    lengths = train_set.lengths
    step, epoch, done = 0, 0, False
    try:
        while not done and epoch < tcfg.max_epochs:
            batches = make_buckets(lengths, tcfg.batch_size, rng, tcfg.bucket_width)
            for bi, idx in enumerate(batches):
                batch = collate(train_set.canvases, train_set.targets, idx)
                model.zero_grad()
                try:
                    with ad.Tape() as tape:
                        J, parts, probs = objective(model, batch, tcfg)
                    tape.backward(J)
                    if not _grads_finite(model.params):
                        raise NumericError("backward")
                except NumericError as exc:
                    # the update has not been applied, so the parameters are the last good ones
                    if out_dir:
                        save_checkpoint(os.path.join(out_dir, "last_good.ckpt"), model, vocab,
                                        meta={"step": step})
                    if log_fh:
                        log_fh.write(json.dumps({"step": step, "event": "abort", "op": exc.op}) + "\n")
                    raise TrainingAborted(step, exc) from exc
                ad.adam_step(model.params, {k: p.grad for k, p in model.params.items()
                                            if p.grad is not None}, state)
                step += 1
                hyps = teacher_forced_predictions(probs, batch.lengths)
                refs = [list(row[:n - 1]) for row, n in zip(batch.targets, batch.lengths)]
                window.append((hyps, refs))

                record = {"step": step, "epoch": epoch, "J": parts.total,
                          "nll": parts.per_word_nll, "ase_n": parts.ase_n}
                last = tcfg.max_steps and step >= tcfg.max_steps
                last = last or (epoch == tcfg.max_epochs - 1 and bi == len(batches) - 1)
                if step % tcfg.eval_period == 0 or last:
                    record["train_bleu"] = corpus_bleu([h for hs, _ in window for h in hs],
                                                       [r for _, rs in window for r in rs])
                    valid_bleu, _ = set_bleu(model, valid_set, tcfg.beam_width, tcfg.max_len)
                    record["valid_bleu"] = valid_bleu
                    if valid_bleu > result.best_valid_bleu:
                        result.best_valid_bleu = valid_bleu
                        result.best_step = step
                        result.best_params = model.snapshot()
                        if out_dir:
                            save_checkpoint(os.path.join(out_dir, "best.ckpt"), model, vocab,
                                            meta={"step": step, "valid_bleu": valid_bleu})
                    if tcfg.stop_at_perfect and valid_bleu >= 1.0:
                        done = True
                result.history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                if last:
                    done = True
                if done:
                    break
            epoch += 1
    finally:
        if log_fh:
            log_fh.close()
    result.steps, result.epochs = step, epoch
    return result
