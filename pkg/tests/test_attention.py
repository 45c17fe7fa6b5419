import numpy as np
import pytest
from hypothesis import given, strategies as st

from im2markup import autodiff as ad
from im2markup.attention import (attend, context, cumulative, focal_region, init_params,
                                 read_trace, write_trace)
from im2markup.config import model_preset
from im2markup.errors import ContractError

from conftest import check_op_gradient


def T(a, grad=False):
    return ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def tiny_params(seed=0, zero=False, **overrides):
    cfg = model_preset("tiny", vocab_size=13, dtype="float64", **overrides)
    raw = init_params(cfg, np.random.default_rng(seed))
    return cfg, {k: T(np.zeros_like(v) if zero else v) for k, v in raw.items()}


def test_zero_weights_attend_uniformly():
    cfg, params = tiny_params(zero=True, canvas=(32, 256))
    L = cfg.n_locations
    alpha = attend(params, T(np.ones((2, L * cfg.feature_dim))), T(np.ones((2, cfg.n_units)))).data
    np.testing.assert_array_equal(alpha, np.full((2, L), 1.0 / L))


def test_full_size_hidden_sizes():
    cfg = model_preset("i2l-strips")
    assert cfg.n_locations == 34 and cfg.att_units == (256, 128)
    assert model_preset("i2l-nopool").att_units == (256, 136)


@given(st.integers(0, 10 ** 6), st.floats(0.1, 30))
def test_attend_is_a_distribution(seed, scale):
    cfg, params = tiny_params(seed, canvas=(32, 128))
    rng = np.random.default_rng(seed)
    params["att.out.w"] = T(params["att.out.w"].data * scale)
    a = rng.normal(size=(3, cfg.n_locations * cfg.feature_dim)) * scale
    alpha = attend(params, T(a), T(rng.uniform(-1, 1, (3, cfg.n_units)))).data
    assert np.all(alpha >= 0) and np.all(alpha <= 1)
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)


def test_attend_dimension_mismatch():
    cfg, params = tiny_params()
    with pytest.raises(ContractError):
        attend(params, T(np.zeros((1, 5))), T(np.zeros((1, cfg.n_units))))


def test_context_one_hot_and_uniform():
    a = np.random.default_rng(0).normal(size=(1, 4, 3))
    np.testing.assert_array_equal(context(T(a), T([[0, 0, 1, 0]])).data[0], a[0, 2])
    np.testing.assert_allclose(context(T(a), T([[0.25] * 4])).data[0], a[0].mean(axis=0), atol=1e-15)


def test_context_matches_direct_summation():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 2))
    alpha = rng.dirichlet(np.ones(3))
    oracle = [sum(alpha[l] * a[l, d] for l in range(3)) for d in range(2)]
    np.testing.assert_allclose(context(T(a[None]), T(alpha[None])).data[0], oracle, atol=1e-15)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_context_is_linear_in_alpha(lam, seed):
    rng = np.random.default_rng(seed)
    a = T(rng.normal(size=(1, 6, 4)))
    a1, a2 = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
    mixed = context(a, T([lam * a1 + (1 - lam) * a2])).data
    split = lam * context(a, T([a1])).data + (1 - lam) * context(a, T([a2])).data
    np.testing.assert_allclose(mixed, split, atol=1e-9, rtol=0)


def test_context_shape_mismatch():
    with pytest.raises(ContractError):
        context(T(np.zeros((1, 4, 3))), T(np.zeros((1, 5))))


def test_attend_and_context_gradients():
    cfg, params = tiny_params(2, canvas=(32, 128))
    rng = np.random.default_rng(2)
    L, D = cfg.n_locations, cfg.feature_dim
    a = rng.normal(size=(2, L, D))
    h = rng.uniform(-1, 1, (2, cfg.n_units))
    names = ["att.fc1.w", "att.fc2.w", "att.out.w", "att.out.b"]
    fixed = {k: v for k, v in params.items() if k not in names}

    def build(a, h, *ws):
        p = dict(fixed, **dict(zip(names, ws)))
        alpha = attend(p, ad.reshape(a, (2, L * D)), h)
        return context(a, alpha)

    check_op_gradient(build, [a, h] + [params[k].data for k in names], tol=1e-6)


def test_cumulative_and_focal_region():
    alphas = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    np.testing.assert_allclose(cumulative(alphas), [0.8, 0.3, 0.9])
    assert abs(cumulative(alphas).sum() - 2) < 1e-4
    assert focal_region(alphas[0]).tolist() == [True, True, True]
    assert focal_region(np.array([0.9, 0.05, 0.05])).tolist() == [True, False, False]


def test_trace_round_trip(tmp_path):
    alphas = np.random.default_rng(0).dirichlet(np.ones(5), size=3)
    write_trace(tmp_path / "t.jsonl", ["x", "+", "<eos>"], alphas)
    tokens, back = read_trace(tmp_path / "t.jsonl")
    assert tokens == ["x", "+", "<eos>"]
    np.testing.assert_array_equal(back, alphas)


def test_ragged_trace_rejected(tmp_path):
    (tmp_path / "t.jsonl").write_text('{"step": 0, "token": "a", "alpha": [1.0]}\n'
                                      '{"step": 1, "token": "b", "alpha": [0.5, 0.5]}\n')
    with pytest.raises(ContractError):
        read_trace(tmp_path / "t.jsonl")
