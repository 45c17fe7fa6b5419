import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from im2markup import autodiff as ad, training
from im2markup.config import TrainConfig, model_preset
from im2markup.dataset import EOS_ID, collate
from im2markup.errors import ConfigError, NumericError
from im2markup.model import Im2MarkupModel
from im2markup.training import (SampleSet, TrainingAborted, ase_normalized, ase_penalty,
                                l2_reg, objective, sequence_nll, train)


def T(a, grad=False):
    return ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def onehot_probs(cols, K):
    out = []
    for c in cols:
        p = np.zeros(K)
        p[c] = 1.0
        out.append(T(p))
    return out


# sequence NLL ---------------------------------------------------------------------

def test_nll_of_certain_predictions_is_zero():
    assert sequence_nll(onehot_probs([2, 0, 1], 4), [3, 1, 2]).item() == 0.0


def test_nll_of_uniform_predictions_is_log_k():
    K = 7
    probs = [T(np.full(K, 1 / K))] * 5
    assert abs(sequence_nll(probs, [3] * 5).item() - math.log(K)) < 1e-12


def test_nll_two_step_example():
    probs = [T([0.5, 0.5, 0.0]), T([0.25, 0.25, 0.5])]
    value = sequence_nll(probs, [1, 2]).item()
    assert abs(value - (math.log(2) + math.log(4)) / 2) < 1e-12
    assert round(value, 4) == 1.0397


def test_nll_ignores_padding_and_averages_per_sample():
    p = T([[0.5, 0.5], [0.5, 0.5]])
    q = T([[0.25, 0.75], [1.0, 0.0]])
    nll = sequence_nll([p, q], np.array([[1, 1], [2, 0]]), lengths=[2, 1]).data
    np.testing.assert_allclose(nll, [(math.log(2) + math.log(4)) / 2, math.log(2)], rtol=1e-12)


def test_zero_probability_is_clamped_and_counted():
    before = training.clamp_events["count"]
    value = sequence_nll([T([1.0, 0.0])], [2]).item()
    assert training.clamp_events["count"] == before + 1
    assert abs(value + math.log(1e-30)) < 1e-9


def test_nll_rejects_empty_sequence():
    with pytest.raises(ValueError):
        sequence_nll([T([0.5, 0.5])], [[1]], lengths=[0])


# ASE -------------------------------------------------------------------------------

def test_uniform_trace_has_zero_ase():
    assert ase_normalized(np.full((6, 4), 0.25)) == 0.0


def test_concentrated_trace_has_max_ase():
    trace = np.zeros((5, 8))
    trace[:, 3] = 1.0
    assert abs(ase_normalized(trace) - 100.0) < 1e-9


def test_ase_two_by_two_example():
    trace = np.array([[1.0, 0.0], [0.5, 0.5]])
    A, ase_n = ase_penalty(trace, ase_target=10.0)
    assert abs(ase_n.item() - 25.0) < 1e-12 and abs(A.item() - 15.0) < 1e-12


def test_ase_needs_two_locations():
    with pytest.raises(ConfigError):
        ase_normalized(np.ones((3, 1)))


@given(st.integers(1, 12), st.integers(2, 40), st.integers(0, 10 ** 6), st.floats(0.05, 20))
def test_ase_within_bounds(tau, L, seed, conc):
    trace = np.random.default_rng(seed).dirichlet(np.full(L, conc), size=tau)
    v = ase_normalized(trace)
    assert -1e-9 <= v <= 100 + 1e-9


def test_ase_gradient_closed_form_and_finite_differences():
    rng = np.random.default_rng(0)
    tau, L = 3, 5
    trace = rng.dirichlet(np.ones(L), size=tau)
    leaves = [T(trace[t][None], grad=True) for t in range(tau)]
    with ad.Tape() as tape:
        A, _ = ase_penalty(leaves)
        root = ad.sum_(A)
    tape.backward(root)
    cum = trace.sum(axis=0)
    norm = tau ** 2 * (L - 1) / L
    expected = 2 * (cum - tau / L) * 100 / norm
    for leaf in leaves:
        np.testing.assert_allclose(leaf.grad[0], expected, rtol=1e-12)
    h = 1e-6
    for t, l in [(0, 0), (2, 3)]:
        up, down = trace.copy(), trace.copy()
        up[t, l] += h
        down[t, l] -= h
        fd = (ase_normalized(up) - ase_normalized(down)) / (2 * h)
        assert abs(fd - expected[l]) / abs(expected[l]) < 1e-6


# L2 ----------------------------------------------------------------------------------

def test_l2_examples():
    assert l2_reg({"w": T(np.zeros((3, 2)))}).item() == 0.0
    assert l2_reg({"w": T([2.0])}).item() == 2.0
    rng = np.random.default_rng(1)
    params = {f"p{i}": T(rng.normal(size=(i + 1, 3))) for i in range(4)}
    oracle = 0.5 * sum(float(x) ** 2 for p in params.values() for x in p.data.ravel())
    assert abs(l2_reg(params).item() - oracle) < 1e-12


def test_l2_gradient_is_the_parameter():
    params = {"a": T([1.0, -2.0], grad=True), "b": T([[3.0]], grad=True)}
    with ad.Tape() as tape:
        R = l2_reg(params)
    tape.backward(R)
    np.testing.assert_array_equal(params["a"].grad, [1.0, -2.0])
    np.testing.assert_array_equal(params["b"].grad, [[3.0]])


# objective and loop ---------------------------------------------------------------------

def tiny_batch(seed, n=4, T_len=3, vocab_size=13):
    rng = np.random.default_rng(seed)
    canvases = rng.uniform(-0.5, 0.5, (n, 32, 64))
    targets = [list(rng.integers(3, vocab_size, size=T_len - 1)) + [EOS_ID] for _ in range(n)]
    return canvases, targets


def test_loss_breakdown_sums_to_total():
    cfg = model_preset("tiny", vocab_size=13, dtype="float64")
    model = Im2MarkupModel.initialize(cfg, 0)
    canvases, targets = tiny_batch(0)
    batch = collate(canvases, targets, np.arange(4))
    tcfg = TrainConfig(lambda_r=1e-3, lambda_a=0.5, ase_target=20.0)
    with ad.no_grad():
        J, parts, _ = objective(model, batch, tcfg)
    assert abs(parts.total - (parts.per_word_nll + 1e-3 * parts.l2_term + 0.5 * parts.ase_penalty)) < 1e-12
    assert abs(parts.ase_penalty - (parts.ase_n - 20.0)) < 1e-9
    assert all(math.isfinite(v) for v in vars(parts).values())


def fixed_batch_losses(seed, steps=20):
    cfg = model_preset("tiny", vocab_size=13)
    model = Im2MarkupModel.initialize(cfg, seed)
    canvases, targets = tiny_batch(seed)
    batch = collate(canvases.astype(np.float32), targets, np.arange(len(targets)))
    tcfg = TrainConfig()
    state = ad.AdamState.for_params(model.params, lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2)
    losses = []
    for _ in range(steps + 1):
        model.zero_grad()
        with ad.Tape() as tape:
            J, parts, _ = objective(model, batch, tcfg)
        tape.backward(J)
        losses.append(parts.total)
        ad.adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
    return losses


def test_fixed_batch_loss_strictly_decreases_for_most_seeds():
    seeds = range(40)
    ok = sum(all(b < a for a, b in zip(l, l[1:])) for l in map(fixed_batch_losses, seeds))
    assert ok / len(seeds) >= 0.95


def small_set(seed=0, n=6):
    canvases, targets = tiny_batch(seed, n=n)
    return SampleSet(canvases.astype(np.float32), targets)


def run(tmp_path, name, seed=0, steps=3):
    model = Im2MarkupModel.initialize(model_preset("tiny", vocab_size=13), seed)
    tcfg = TrainConfig(batch_size=4, max_steps=steps, eval_period=2, beam_width=2, max_len=4,
                       valid_fraction=0.0, seed=seed)
    log = tmp_path / f"{name}.jsonl"
    res = train(model, tcfg, small_set(seed), out_dir=tmp_path / name, log_path=log)
    return res, log


def test_training_is_bit_identical_across_runs(tmp_path):
    a, log_a = run(tmp_path, "a")
    b, log_b = run(tmp_path, "b")
    assert log_a.read_bytes() == log_b.read_bytes()
    assert [r["J"] for r in a.history] == [r["J"] for r in b.history]
    assert a.steps == 3


def test_training_log_and_snapshots(tmp_path):
    res, log = run(tmp_path, "r")
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert {"step", "epoch", "J", "nll", "ase_n"} <= set(rows[0])
    assert "valid_bleu" in rows[1] and "train_bleu" in rows[2] and "valid_bleu" not in rows[0]
    assert (tmp_path / "r" / "best.ckpt").exists() and res.best_params is not None


def test_numeric_failure_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    real = training.objective
    calls = {"n": 0}

    def flaky(model, batch, tcfg):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericError("log")
        return real(model, batch, tcfg)

    monkeypatch.setattr(training, "objective", flaky)
    with pytest.raises(TrainingAborted) as info:
        run(tmp_path, "nan", steps=5)
    assert info.value.step == 1
    assert (tmp_path / "nan" / "last_good.ckpt").exists()
    last = json.loads((tmp_path / "nan.jsonl").read_text().splitlines()[-1])
    assert last == {"step": 1, "event": "abort", "op": "log"}


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ase_target=101).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lambda_a=-1).validate()
    assert TrainConfig().lambda_a == 0.0 and TrainConfig().beta1 == 0.5
