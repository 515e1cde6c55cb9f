import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinet.polynet import (BlockSpec, CCPParams, ModelSpec, NCPParams, NCPSkipParams,
                           NormalizationSpec, PolyBlock, PolyChain, SimpleSingleOpParams,
                           ccp_forward, chain_forward, count_params, init_params, ncp_forward,
                           ncp_skip_forward, polynomialize_residual, random_model,
                           simple_single_op_forward, trainable_names)

VARIANTS = ["ccp", "ncp", "ncp_skip", "simple"]


def draw(variant, N, d=2, k=3, o=2, seed=0, norm="none", omega=None):
    o = k if variant == "simple" else o
    spec = BlockSpec(variant, N, d, k, o, omega, NormalizationSpec(norm))
    return random_model(ModelSpec((spec,)), seed=seed)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("N", [1, 2, 4])
def test_zero_input_gives_beta(variant, N):
    block = draw(variant, N, seed=N)
    np.testing.assert_array_equal(block(np.zeros(block.d)), block.params.beta)
    np.testing.assert_array_equal(block(np.zeros((3, block.d))), np.tile(block.params.beta, (3, 1)))


def test_ccp_order_one_is_linear():
    p = draw("ccp", 1).params
    z = np.array([0.3, -1.2])
    np.testing.assert_allclose(ccp_forward(p, z), p.C @ (p.U[0].T @ z) + p.beta, rtol=1e-14)


def test_ncp_order_one_with_unit_b_term_is_linear():
    p = draw("ncp", 1, k=2, omega=2).params
    p = NCPParams(p.A, [], [np.eye(2)], [np.ones(2)], p.C, p.beta)
    z = np.array([0.7, 0.1])
    np.testing.assert_allclose(ncp_forward(p, z), p.C @ (p.A[0].T @ z) + p.beta, rtol=1e-14)


def _ccp_loop(p, z):
    x = p.U[0].T @ z
    for n in range(1, p.N):
        x = (p.U[n].T @ z) * x + x
    return p.C @ x + p.beta


def _ncp_loop(p, z, V=None):
    x = (p.A[0].T @ z) * (p.B[0].T @ p.b[0])
    for n in range(1, p.N):
        new = (p.A[n].T @ z) * (p.S[n - 1].T @ x + p.B[n].T @ p.b[n])
        x = new + (V[n - 1] @ x if V is not None else 0)
    return p.C @ x + p.beta


@pytest.mark.parametrize("N", [1, 2, 3, 5])
def test_forwards_match_column_convention_loops(N):
    z = np.random.default_rng(N).standard_normal(2)
    ccp = draw("ccp", N, seed=N).params
    np.testing.assert_allclose(ccp_forward(ccp, z), _ccp_loop(ccp, z), rtol=1e-12)
    ncp = draw("ncp", N, seed=N, omega=4).params
    np.testing.assert_allclose(ncp_forward(ncp, z), _ncp_loop(ncp, z), rtol=1e-12)
    skip = draw("ncp_skip", N, seed=N).params
    np.testing.assert_allclose(ncp_skip_forward(skip, z), _ncp_loop(skip, z, skip.V), rtol=1e-12)


def test_batch_matches_rows():
    block = draw("ncp_skip", 3)
    Z = np.random.default_rng(1).standard_normal((5, 2))
    batch = block(Z)
    for i in range(5):
        np.testing.assert_allclose(batch[i], block(Z[i]), rtol=1e-14)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_skip_with_zero_v_is_ncp_bitwise(N):
    p = draw("ncp_skip", N, seed=3).params
    p.V = [np.zeros_like(v) for v in p.V]
    Z = np.random.default_rng(2).standard_normal((20, 2))
    assert ncp_skip_forward(p, Z).tobytes() == ncp_forward(p.without_skip(), Z).tobytes()


def test_polynomialize_residual_trivial_cases():
    p = draw("ncp_skip", 3, k=3).params
    p.S = [np.zeros((3, 3)) for _ in p.S]
    for v in polynomialize_residual(p).V:
        np.testing.assert_array_equal(v, np.eye(3))
    p.S = [-np.eye(3) for _ in p.S]
    q = polynomialize_residual(p)
    for v in q.V:
        np.testing.assert_array_equal(v, np.zeros((3, 3)))
    Z = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_array_equal(ncp_skip_forward(q, Z), ncp_forward(q.without_skip(), Z))


@pytest.mark.parametrize("seed", range(5))
def test_polynomialize_residual_matches_hand_expansion(seed):
    p = polynomialize_residual(draw("ncp_skip", 4, k=3, seed=seed).params)
    z = np.random.default_rng(seed).standard_normal(2)
    x = (p.A[0].T @ z) * (p.B[0].T @ p.b[0])
    for n in range(1, p.N):
        S = p.S[n - 1]
        x = x + S @ x + (p.A[n].T @ z) * (S.T @ x + p.B[n].T @ p.b[n])
    expected = p.C @ x + p.beta
    got = ncp_skip_forward(p, z)
    assert np.max(np.abs(got - expected)) <= 1e-12 * max(1.0, np.max(np.abs(expected)))


def test_simple_single_op_examples():
    p = SimpleSingleOpParams(2, np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(simple_single_op_forward(p, np.array([2.0, 3.0])), [6, 12])
    p3 = SimpleSingleOpParams(3, np.eye(2), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(simple_single_op_forward(p3, np.array([2.0, 3.0])),
                                  [2 + 4 + 8 + 1, 3 + 9 + 27 - 1])
    np.testing.assert_array_equal(simple_single_op_forward(p3, np.zeros(2)), p3.beta)


def test_tanh_normalization_applies_to_higher_terms_only():
    p = CCPParams([np.eye(2), np.eye(2)], np.eye(2), np.zeros(2))
    z = np.array([2.0, -3.0])
    got = ccp_forward(p, z, NormalizationSpec("tanh"))
    np.testing.assert_allclose(got, np.tanh(z * z) + z, rtol=1e-15)
    assert np.all(np.abs(ccp_forward(p, 100 * z, NormalizationSpec("tanh")) - 100 * z) <= 1)


def test_standardize_normalization_on_second_order_term():
    p = CCPParams([np.eye(3), np.eye(3)], np.eye(3), np.zeros(3))
    z = np.array([1.0, 2.0, 4.0])
    sq = z * z
    expected = (sq - sq.mean()) / np.sqrt(sq.var() + 1e-5) + z
    np.testing.assert_allclose(ccp_forward(p, z, NormalizationSpec("standardize")), expected,
                               rtol=1e-13)


def test_normalization_spec_validation():
    with pytest.raises(ValueError):
        NormalizationSpec("batch")
    with pytest.raises(ValueError):
        NormalizationSpec("standardize", 0.0)


def test_dimension_and_finiteness_errors():
    block = draw("ccp", 2)
    with pytest.raises(ValueError, match="does not match"):
        block(np.zeros(3))
    with pytest.raises(ValueError, match="non-finite"):
        block(np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        CCPParams([np.ones((2, 2)), np.ones((3, 2))], np.ones((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        NCPParams([np.ones((2, 2))] * 2, [], [np.ones((2, 2))] * 2, [np.ones(2)] * 2,
                  np.ones((1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        NCPSkipParams([np.ones((2, 2))], [], [np.ones((2, 2))], [np.ones(2)], np.ones((1, 2)),
                      np.zeros(1), [np.eye(2)])
    with pytest.raises(ValueError):
        SimpleSingleOpParams(2, np.ones((2, 3)), np.zeros(2))
    with pytest.raises(TypeError):
        PolyBlock("ncp", draw("ccp", 1).params)


def test_chain_of_one_block_is_the_block():
    block = draw("ncp", 3)
    Z = np.random.default_rng(0).standard_normal((4, 2))
    assert chain_forward(PolyChain([block]), Z).tobytes() == block(Z).tobytes()


def test_chain_composes_and_multiplies_order():
    spec = ModelSpec((BlockSpec("ccp", 2, 2, 3, 3), BlockSpec("ncp", 3, 3, 2, 2),
                      BlockSpec("simple", 2, 2, 2, 2)))
    chain = random_model(spec, seed=1)
    assert chain.order == 12
    z = np.array([0.4, -0.9])
    b0, b1, b2 = chain.blocks
    np.testing.assert_array_equal(chain(z), b2(b1(b0(z))))


def test_chain_dimension_mismatch():
    with pytest.raises(ValueError, match="expects"):
        PolyChain([draw("ccp", 2, o=2), draw("ccp", 2, d=3)])
    with pytest.raises(ValueError):
        ModelSpec((BlockSpec("ccp", 2, 2, 3, 2), BlockSpec("ccp", 2, 3, 3, 1)))


@pytest.mark.parametrize("variant", VARIANTS)
def test_init_is_deterministic(variant):
    spec = BlockSpec(variant, 3, 2, 4, 4 if variant == "simple" else 2)
    a, b, c = init_params(spec, seed=5), init_params(spec, seed=5), init_params(spec, seed=6)
    for k in a.named():
        assert np.asarray(a.named()[k]).tobytes() == np.asarray(b.named()[k]).tobytes()
    assert any(not np.array_equal(a.named()[k], c.named()[k]) for k in a.named()
               if k not in ("beta",) and not k.startswith("b"))


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        BlockSpec("ccp", 2, 0, 3, 1)
    with pytest.raises(ValueError):
        BlockSpec("ccp", 0, 2, 3, 1)
    with pytest.raises(ValueError):
        BlockSpec("simple", 2, 2, 3, 2)


def test_init_magnitude_audit():
    block = init_params(BlockSpec("ccp", 4, 16, 16, 16), seed=0)
    Z = np.random.default_rng(0).standard_normal((1000, 16))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    norms = np.linalg.norm(block(Z), axis=1)
    assert norms.min() >= 1e-3 and norms.max() <= 1e3


@pytest.mark.parametrize("variant,N,d,k,o,omega,expected", [
    ("ccp", 2, 2, 3, 1, None, 16),
    ("ccp", 1, 4, 2, 3, None, 4 * 2 + 3 * 2 + 3),
    ("ncp", 3, 2, 3, 1, 4, 3 * 2 * 3 + 3 + 1 + 2 * 9 + 3 * 4 * 3 + 3 * 4),
    ("ncp_skip", 3, 2, 3, 1, None, 3 * 2 * 3 + 3 + 1 + 2 * 9 + 3 * 3 * 3 + 3 * 3 + 2 * 9),
    ("simple", 4, 2, 3, 3, None, 6 + 3),
])
def test_count_params(variant, N, d, k, o, omega, expected):
    spec = BlockSpec(variant, N, d, k, o, omega)
    assert count_params(spec) == expected
    assert count_params(spec) == sum(np.size(v) for v in init_params(spec).named().values())


def test_count_params_chain_freezes_inner_bias():
    blocks = (BlockSpec("ccp", 2, 2, 3, 2), BlockSpec("ccp", 2, 2, 3, 1))
    frozen, free = ModelSpec(blocks), ModelSpec(blocks, inner_bias=True)
    assert count_params(free) - count_params(frozen) == 2
    model = init_params(frozen)
    assert "block0.beta" not in trainable_names(model, frozen)
    assert "block0.beta" in trainable_names(model, free)
    assert count_params(frozen) == sum(np.size(model.named()[n])
                                       for n in trainable_names(model, frozen))


def test_with_tensors_roundtrip():
    block = draw("ncp_skip", 3)
    again = block.with_tensors(block.named())
    z = np.array([0.2, 0.5])
    np.testing.assert_array_equal(again(z), block(z))


def _line_difference(model, v, order, h=0.5):
    from math import comb
    vals = [model(t * h * v) for t in range(order + 1)]
    return sum((-1) ** (order - i) * comb(order, i) * vals[i] for i in range(order + 1)), vals


@pytest.mark.parametrize("variant", VARIANTS)
def test_finite_difference_polynomiality(variant):
    N = 4
    block = draw(variant, N, seed=9)
    v = np.random.default_rng(9).standard_normal(block.d)
    v /= np.linalg.norm(v)
    top, vals = _line_difference(block, v, N + 1)
    scale = max(np.max(np.abs(x)) for x in vals)
    assert np.max(np.abs(top)) <= 1e-8 * scale
    nth, vals = _line_difference(block, v, N)
    assert np.max(np.abs(nth)) > 1e-8 * max(np.max(np.abs(x)) for x in vals)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(-2, 2))
def test_ccp_homogeneous_scaling_without_bias(seed, alpha):
    # with beta = 0 and N = 1 the model is linear in z
    block = draw("ccp", 1, seed=seed)
    block.params.beta = np.zeros_like(block.params.beta)
    z = np.random.default_rng(seed).standard_normal(2)
    np.testing.assert_allclose(block(alpha * z), alpha * block(z), rtol=1e-12, atol=1e-12)


def test_chain_propagates_overflow_as_nan():
    chain = random_model(ModelSpec((BlockSpec("ccp", 4, 2, 2, 2), BlockSpec("ccp", 2, 2, 2, 1))))
    with np.errstate(over="ignore", invalid="ignore"):
        out = chain(np.full((2, 2), 1e200))
    assert out.shape == (2, 1) and np.all(np.isnan(out))
    with pytest.raises(ValueError, match="non-finite"):
        chain(np.array([np.inf, 0.0]))
