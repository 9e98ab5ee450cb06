import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsplat.attention import (
    AttentionBlockParams,
    TokenMatrix,
    attention_gradcheck,
    cross_modal_fuse,
    fuse_backward,
    scaled_dot_attention,
)
from semsplat.errors import DataError


def tokens(rng, n, d, role="point"):
    return TokenMatrix(rng.normal(size=(n, d)), role)


def test_token_matrix_validation(rng):
    t = tokens(rng, 3, 4)
    assert t.count == 3 and t.width == 4
    with pytest.raises(DataError):
        TokenMatrix(np.zeros((3, 4)), "unknown-role")
    with pytest.raises(DataError):
        TokenMatrix(np.zeros(4), "point")
    with pytest.raises(DataError):
        TokenMatrix(np.full((2, 2), np.nan), "point")


def test_scaled_dot_attention_hand_oracle():
    # 2 queries, 2 keys, explicit softmax by hand
    q = np.array([[1.0, 0.0], [0.0, 2.0]])
    k = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[1.0, 10.0], [2.0, 20.0]])
    scale = 1.0 / np.sqrt(2.0)
    logits = q @ k.T * scale
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    a = e / e.sum(axis=1, keepdims=True)
    expected = a @ v
    np.testing.assert_allclose(scaled_dot_attention(q, k, v), expected, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_attention_rows_are_convex_combinations(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(5, 6))
    k = rng.normal(size=(7, 6))
    v = rng.normal(size=(7, 3))
    out = scaled_dot_attention(q, k, v)
    assert out.shape == (5, 3)
    # rows lie inside the convex hull of v's coordinate ranges
    assert np.all(out <= v.max(axis=0) + 1e-12)
    assert np.all(out >= v.min(axis=0) - 1e-12)


def test_zero_params_is_identity(rng):
    for heads in (1, 2, 4):
        params = AttentionBlockParams.zeros(8, heads=heads)
        p = tokens(rng, 5, 8)
        f = tokens(rng, 9, 8, "image")
        fused = cross_modal_fuse(p, f, params)
        np.testing.assert_array_equal(fused.tokens, p.tokens)
        assert fused.role == "point"


def test_f_permutation_invariance(rng):
    params = AttentionBlockParams.random(8, rng)
    p = tokens(rng, 6, 8)
    f = tokens(rng, 10, 8, "image")
    base = cross_modal_fuse(p, f, params).tokens
    perm = rng.permutation(10)
    f_perm = TokenMatrix(f.tokens[perm], "image")
    shuffled = cross_modal_fuse(p, f_perm, params).tokens
    np.testing.assert_allclose(shuffled, base, atol=1e-12)


def test_p_permutation_equivariance(rng):
    params = AttentionBlockParams.random(8, rng)
    p = tokens(rng, 6, 8)
    f = tokens(rng, 9, 8, "image")
    base = cross_modal_fuse(p, f, params).tokens
    perm = rng.permutation(6)
    p_perm = TokenMatrix(p.tokens[perm], "point")
    permuted = cross_modal_fuse(p_perm, f, params).tokens
    np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


def test_width_mismatch_and_head_divisibility(rng):
    params = AttentionBlockParams.random(8, rng)
    with pytest.raises(DataError):
        cross_modal_fuse(tokens(rng, 3, 6), tokens(rng, 4, 8, "image"), params)
    with pytest.raises(DataError):
        AttentionBlockParams.random(6, rng, heads=4)


def test_gradcheck_single_head(rng):
    params = AttentionBlockParams.random(8, rng)
    report = attention_gradcheck(params, tokens(rng, 4, 8), tokens(rng, 4, 8, "image"))
    assert report.passed, report.failures[:5]
    assert report.max_rel_err < 1e-4


def test_gradcheck_multi_head(rng):
    params = AttentionBlockParams.random(8, rng, heads=2)
    report = attention_gradcheck(params, tokens(rng, 5, 8), tokens(rng, 6, 8, "image"))
    assert report.passed, report.failures[:5]


def test_fuse_backward_matches_directional_derivative(rng):
    d = 6
    params = AttentionBlockParams.random(d, rng)
    p = tokens(rng, 4, d)
    f = tokens(rng, 5, d, "image")
    d_out = rng.normal(size=(4, d))
    d_p, d_f, d_params = fuse_backward(p, f, params, d_out)
    assert d_p.shape == p.tokens.shape
    assert d_f.shape == f.tokens.shape
    assert set(d_params) >= {"wq", "wk", "wv", "wo", "w_in", "w_out"}
    h = 1e-6
    # directional derivative along a random probe through both inputs
    dir_p = rng.normal(size=p.tokens.shape)
    dir_f = rng.normal(size=f.tokens.shape)

    def value(tp, tf):
        out = cross_modal_fuse(TokenMatrix(tp, "point"), TokenMatrix(tf, "image"), params)
        return float(np.sum(out.tokens * d_out))

    fd = (value(p.tokens + h * dir_p, f.tokens + h * dir_f)
          - value(p.tokens - h * dir_p, f.tokens - h * dir_f)) / (2 * h)
    analytic = float(np.sum(d_p * dir_p) + np.sum(d_f * dir_f))
    assert analytic == pytest.approx(fd, rel=1e-6, abs=1e-9)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_fused_output_finite_and_shaped(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 10))
    heads = 1 if d % 2 else 2
    params = AttentionBlockParams.random(d, rng, heads=heads)
    p = tokens(rng, int(rng.integers(1, 7)), d)
    f = tokens(rng, int(rng.integers(1, 9)), d, "image")
    out = cross_modal_fuse(p, f, params)
    assert out.tokens.shape == p.tokens.shape
    assert np.all(np.isfinite(out.tokens))
