"""Cross-modal attention fusion at toy scale.

One residual block over point tokens P fed by context tokens F:
self-attention on P, cross-attention from F, then a GELU MLP, each behind
a pre-normalization (layer norm with learned affine). A single set of
Q/K/V/output projections is shared by both attention sub-blocks. With all
parameters zero the block is exactly the identity on P.

The backward pass is written out by hand (softmax, layer norm, GELU, and
the two attention applications) and validated coordinate-by-coordinate
against central finite differences by attention_gradcheck.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np
from scipy.special import erf

from .errors import DataError

LN_EPS = 1e-5
TOKEN_ROLES = ("point", "image", "semantic")
GRADCHECK_MAX_TOKENS = 8
GRADCHECK_MAX_WIDTH = 16


@dataclass(frozen=True)
class TokenMatrix:
    """n tokens of width d with a modality tag."""

    tokens: np.ndarray
    role: str

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] < 1:
            raise DataError(f"tokens must have shape (n, d) with d >= 1, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DataError("tokens contain non-finite values")
        if self.role not in TOKEN_ROLES:
            raise DataError(f"role must be one of {TOKEN_ROLES}, got {self.role!r}")
        tf = np.array(t, copy=True)
        tf.flags.writeable = False
        object.__setattr__(self, "tokens", tf)

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


_MATRIX_SHAPES = ("wq", "wk", "wv", "wo", "w_in", "w_out")
_VECTOR_SHAPES = (
    "ln_self_gain", "ln_self_bias", "ln_cross_gain", "ln_cross_bias",
    "ln_kv_gain", "ln_kv_bias", "ln_mlp_gain", "ln_mlp_bias",
)


@dataclass(frozen=True)
class AttentionBlockParams:
    """Weights of the fusion block (see module docstring for wiring)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln_self_gain: np.ndarray
    ln_self_bias: np.ndarray
    ln_cross_gain: np.ndarray
    ln_cross_bias: np.ndarray
    ln_kv_gain: np.ndarray
    ln_kv_bias: np.ndarray
    ln_mlp_gain: np.ndarray
    ln_mlp_bias: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    heads: int = 1

    def __post_init__(self):
        wq = np.asarray(self.wq, dtype=np.float64)
        if wq.ndim != 2 or wq.shape[0] != wq.shape[1]:
            raise DataError(f"wq must be square (d, d), got {wq.shape}")
        d = wq.shape[0]
        heads = int(self.heads)
        if heads < 1 or d % heads != 0:
            raise DataError(f"heads must divide the width; got d={d}, heads={heads}")
        expected = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w_in": (d, 4 * d), "w_out": (4 * d, d),
        }
        for name in _MATRIX_SHAPES:
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != expected[name]:
                raise DataError(f"{name} must have shape {expected[name]}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
            af = np.array(a, copy=True)
            af.flags.writeable = False
            object.__setattr__(self, name, af)
        for name in _VECTOR_SHAPES:
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (d,):
                raise DataError(f"{name} must have shape ({d},), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite values")
            af = np.array(a, copy=True)
            af.flags.writeable = False
            object.__setattr__(self, name, af)
        object.__setattr__(self, "heads", heads)

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    @property
    def key_width(self) -> int:
        return self.width // self.heads

    @classmethod
    def zeros(cls, d: int, heads: int = 1) -> "AttentionBlockParams":
        z = np.zeros((d, d))
        v = np.zeros(d)
        return cls(
            wq=z, wk=z, wv=z, wo=z,
            ln_self_gain=v, ln_self_bias=v,
            ln_cross_gain=v, ln_cross_bias=v,
            ln_kv_gain=v, ln_kv_bias=v,
            ln_mlp_gain=v, ln_mlp_bias=v,
            w_in=np.zeros((d, 4 * d)), w_out=np.zeros((4 * d, d)),
            heads=heads,
        )

    @classmethod
    def random(cls, d: int, rng: np.random.Generator, heads: int = 1, scale: float = 0.2) -> "AttentionBlockParams":
        def mat(shape):
            return scale * rng.standard_normal(shape)

        return cls(
            wq=mat((d, d)), wk=mat((d, d)), wv=mat((d, d)), wo=mat((d, d)),
            ln_self_gain=1.0 + mat((d,)), ln_self_bias=mat((d,)),
            ln_cross_gain=1.0 + mat((d,)), ln_cross_bias=mat((d,)),
            ln_kv_gain=1.0 + mat((d,)), ln_kv_bias=mat((d,)),
            ln_mlp_gain=1.0 + mat((d,)), ln_mlp_bias=mat((d,)),
            w_in=mat((d, 4 * d)), w_out=mat((4 * d, d)),
            heads=heads,
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(q k^T / sqrt(d_k)) v with per-row max stabilization."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DataError("q, k, v must be 2D matrices")
    if q.shape[1] != k.shape[1]:
        raise DataError(f"key width mismatch: q has {q.shape[1]}, k has {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise DataError(f"k and v must agree on token count: {k.shape[0]} vs {v.shape[0]}")
    if k.shape[0] < 1:
        raise DataError("attention requires at least one key")
    attn = _softmax(q @ k.T / np.sqrt(q.shape[1]))
    return attn @ v


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, gain: np.ndarray, cache):
    xhat, inv = cache
    d_gain = (dy * xhat).sum(axis=0)
    d_bias = dy.sum(axis=0)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, d_gain, d_bias


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dk = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dk)


def _attention_sub(xq: np.ndarray, xkv: np.ndarray, p: AttentionBlockParams):
    q = xq @ p.wq
    k = xkv @ p.wk
    v = xkv @ p.wv
    scale = 1.0 / np.sqrt(p.key_width)
    qh = _split_heads(q, p.heads)
    kh = _split_heads(k, p.heads)
    vh = _split_heads(v, p.heads)
    attn = _softmax(np.einsum("hnk,hmk->hnm", qh, kh) * scale)
    oh = np.einsum("hnm,hmk->hnk", attn, vh)
    o = _merge_heads(oh)
    out = o @ p.wo
    return out, (q, k, v, qh, kh, vh, attn, o, scale)


def _attention_sub_backward(d_out: np.ndarray, xq, xkv, p: AttentionBlockParams, cache, grads: dict):
    q, k, v, qh, kh, vh, attn, o, scale = cache
    grads["wo"] += o.T @ d_out
    d_o = d_out @ p.wo.T
    d_oh = _split_heads(d_o, p.heads)
    d_attn = np.einsum("hnk,hmk->hnm", d_oh, vh)
    d_vh = np.einsum("hnm,hnk->hmk", attn, d_oh)
    # softmax rows: dS = A * (dA - sum(A * dA))
    inner = (attn * d_attn).sum(axis=-1, keepdims=True)
    d_logits = attn * (d_attn - inner)
    d_qh = np.einsum("hnm,hmk->hnk", d_logits, kh) * scale
    d_kh = np.einsum("hnm,hnk->hmk", d_logits, qh) * scale
    d_q = _merge_heads(d_qh)
    d_k = _merge_heads(d_kh)
    d_v = _merge_heads(d_vh)
    grads["wq"] += xq.T @ d_q
    grads["wk"] += xkv.T @ d_k
    grads["wv"] += xkv.T @ d_v
    d_xq = d_q @ p.wq.T
    d_xkv = d_k @ p.wk.T + d_v @ p.wv.T
    return d_xq, d_xkv


def _gelu(x: np.ndarray):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * cdf, cdf


def _gelu_backward(dy: np.ndarray, x: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return dy * (cdf + x * pdf)


def _fuse_forward(p_tokens: np.ndarray, f_tokens: np.ndarray, params: AttentionBlockParams):
    x0 = p_tokens
    n1, c_ln1 = _layer_norm(x0, params.ln_self_gain, params.ln_self_bias)
    a1, c_att1 = _attention_sub(n1, n1, params)
    x1 = x0 + a1
    n2, c_ln2 = _layer_norm(x1, params.ln_cross_gain, params.ln_cross_bias)
    nf, c_lnf = _layer_norm(f_tokens, params.ln_kv_gain, params.ln_kv_bias)
    a2, c_att2 = _attention_sub(n2, nf, params)
    x2 = x1 + a2
    n3, c_ln3 = _layer_norm(x2, params.ln_mlp_gain, params.ln_mlp_bias)
    pre = n3 @ params.w_in
    act, cdf = _gelu(pre)
    mlp_out = act @ params.w_out
    x3 = x2 + mlp_out
    cache = (x0, n1, c_ln1, c_att1, x1, n2, c_ln2, nf, c_lnf, c_att2, x2, n3, c_ln3, pre, act, cdf)
    return x3, cache


def _fuse_backward(d_x3: np.ndarray, params: AttentionBlockParams, cache):
    (x0, n1, c_ln1, c_att1, x1, n2, c_ln2, nf, c_lnf, c_att2,
     x2, n3, c_ln3, pre, act, cdf) = cache
    grads = {f.name: np.zeros_like(getattr(params, f.name))
             for f in dc_fields(params) if f.name != "heads"}
    # MLP
    d_x2 = d_x3.copy()
    grads["w_out"] += act.T @ d_x3
    d_act = d_x3 @ params.w_out.T
    d_pre = _gelu_backward(d_act, pre, cdf)
    grads["w_in"] += n3.T @ d_pre
    d_n3 = d_pre @ params.w_in.T
    dx, dg, db = _layer_norm_backward(d_n3, params.ln_mlp_gain, c_ln3)
    grads["ln_mlp_gain"] += dg
    grads["ln_mlp_bias"] += db
    d_x2 += dx
    # cross attention
    d_x1 = d_x2.copy()
    d_n2, d_nf = _attention_sub_backward(d_x2, n2, nf, params, c_att2, grads)
    dx, dg, db = _layer_norm_backward(d_n2, params.ln_cross_gain, c_ln2)
    grads["ln_cross_gain"] += dg
    grads["ln_cross_bias"] += db
    d_x1 += dx
    d_f, dg, db = _layer_norm_backward(d_nf, params.ln_kv_gain, c_lnf)
    grads["ln_kv_gain"] += dg
    grads["ln_kv_bias"] += db
    # self attention (query and key/value paths share n1)
    d_x0 = d_x1.copy()
    d_n1q, d_n1kv = _attention_sub_backward(d_x1, n1, n1, params, c_att1, grads)
    dx, dg, db = _layer_norm_backward(d_n1q + d_n1kv, params.ln_self_gain, c_ln1)
    grads["ln_self_gain"] += dg
    grads["ln_self_bias"] += db
    d_x0 += dx
    return d_x0, d_f, grads


def cross_modal_fuse(p: TokenMatrix, f: TokenMatrix, params: AttentionBlockParams) -> TokenMatrix:
    """Update point tokens by attending to themselves and then to F.

    Residual wiring: P += SelfAttn(norm P); P += CrossAttn(norm P, norm F);
    P += MLP(norm P). Permutation-equivariant in P rows, permutation-
    invariant in F rows; the zero-parameter block is the identity.
    """
    if not isinstance(p, TokenMatrix) or not isinstance(f, TokenMatrix):
        raise DataError("cross_modal_fuse expects TokenMatrix inputs")
    if p.width != params.width or f.width != params.width:
        raise DataError(
            f"token width mismatch: P has {p.width}, F has {f.width}, params expect {params.width}"
        )
    if f.count < 1:
        raise DataError("F must contain at least one token")
    out, _ = _fuse_forward(p.tokens, f.tokens, params)
    return TokenMatrix(tokens=out, role="point")


def fuse_backward(p: TokenMatrix, f: TokenMatrix, params: AttentionBlockParams, d_out: np.ndarray):
    """Analytic gradients of cross_modal_fuse w.r.t. P, F, and all params.

    Returns (dP, dF, dict of parameter gradients keyed by field name).
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != p.tokens.shape:
        raise DataError(f"d_out must match P shape {p.tokens.shape}, got {d_out.shape}")
    _, cache = _fuse_forward(p.tokens, f.tokens, params)
    return _fuse_backward(d_out, params, cache)


@dataclass(frozen=True)
class GradcheckReport:
    """Outcome of the finite-difference sweep over every coordinate."""

    passed: bool
    max_abs_err: float
    max_rel_err: float
    coords_checked: int
    failures: tuple
    rel_tol: float
    abs_tol: float


def attention_gradcheck(
    params: AttentionBlockParams,
    p: TokenMatrix,
    f: TokenMatrix,
    seed: int = 0,
    step: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-6,
) -> GradcheckReport:
    """Check every analytic gradient against central finite differences.

    The scalar readout is a fixed random weighting of the output tokens.
    Sizes are capped (n, m <= 8, d <= 16) to keep the sweep fast.
    """
    if p.count > GRADCHECK_MAX_TOKENS or f.count > GRADCHECK_MAX_TOKENS:
        raise DataError(f"gradcheck token counts must be <= {GRADCHECK_MAX_TOKENS}")
    if params.width > GRADCHECK_MAX_WIDTH:
        raise DataError(f"gradcheck width must be <= {GRADCHECK_MAX_WIDTH}")
    rng = np.random.Generator(np.random.PCG64(seed))
    readout = rng.standard_normal(p.tokens.shape)

    # assemble a mutable parameter dict for the FD sweep
    names = [fld.name for fld in dc_fields(params) if fld.name != "heads"]
    p_arr_params = {name: np.array(getattr(params, name)) for name in names}

    def params_from(d):
        return AttentionBlockParams(heads=params.heads, **d)

    base_params = params_from(p_arr_params)
    out, cache = _fuse_forward(p.tokens, f.tokens, base_params)
    d_p, d_f, d_params = _fuse_backward(readout, base_params, cache)

    targets = [("P", np.array(p.tokens), d_p), ("F", np.array(f.tokens), d_f)]
    targets += [(name, p_arr_params[name], d_params[name]) for name in names]

    max_abs = 0.0
    max_rel = 0.0
    failures = []
    checked = 0
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            if name == "P":
                hi = float(np.sum(readout * _fuse_forward(arr, f.tokens, base_params)[0]))
            elif name == "F":
                hi = float(np.sum(readout * _fuse_forward(p.tokens, arr, base_params)[0]))
            else:
                hi = float(np.sum(readout * _fuse_forward(p.tokens, f.tokens, params_from(p_arr_params))[0]))
            flat[idx] = orig - step
            if name == "P":
                lo = float(np.sum(readout * _fuse_forward(arr, f.tokens, base_params)[0]))
            elif name == "F":
                lo = float(np.sum(readout * _fuse_forward(p.tokens, arr, base_params)[0]))
            else:
                lo = float(np.sum(readout * _fuse_forward(p.tokens, f.tokens, params_from(p_arr_params))[0]))
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * step)
            a_val = float(analytic.reshape(-1)[idx])
            abs_err = abs(a_val - numeric)
            rel_err = abs_err / max(abs(a_val), abs(numeric), abs_tol)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            checked += 1
            if abs_err > abs_tol and rel_err > rel_tol:
                failures.append((name, idx, a_val, numeric))
    return GradcheckReport(
        passed=not failures,
        max_abs_err=max_abs,
        max_rel_err=max_rel,
        coords_checked=checked,
        failures=tuple(failures),
        rel_tol=rel_tol,
        abs_tol=abs_tol,
    )
