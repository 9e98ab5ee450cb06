import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semsplat.errors import DataError
from semsplat.metrics import (
    DEFAULT_CLASS_NAMES,
    IGNORE_LABEL,
    LabelMap,
    TextEmbeddingSet,
    depth_rel_tau,
    miou_pixel_acc,
    open_vocab_segment,
    pca_visualize,
    psnr,
    ssim,
)


def test_psnr_formula_and_cap(rng):
    a = rng.uniform(size=(6, 7, 3))
    b = rng.uniform(size=(6, 7, 3))
    mse = np.mean((a - b) ** 2)
    assert psnr(a, b) == pytest.approx(10.0 * math.log10(1.0 / mse), rel=1e-12)
    assert psnr(a, a) == 100.0
    # near-identical images also hit the cap
    assert psnr(a, a + 1e-11) == 100.0
    assert psnr(a, b, max_val=2.0) == pytest.approx(
        10.0 * math.log10(4.0 / mse), rel=1e-12
    )
    with pytest.raises(DataError):
        psnr(a, b[:3])
    with pytest.raises(DataError):
        psnr(a, b, max_val=0.0)


def test_ssim_reexport(rng):
    img = rng.uniform(size=(16, 16))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_label_map_validation():
    lm = LabelMap(np.array([[0, 1], [IGNORE_LABEL, 2]]), ("a", "b", "c"))
    assert lm.labels.dtype == np.int64
    # integer-valued floats are accepted, fractional ones are not
    LabelMap(np.array([[0.0, 1.0]]), ("a", "b"))
    with pytest.raises(DataError):
        LabelMap(np.array([[0.5, 1.0]]), ("a", "b"))
    with pytest.raises(DataError):
        LabelMap(np.array([0, 1]), ("a", "b"))
    with pytest.raises(DataError):
        LabelMap(np.array([[0, 3]]), ("a", "b"))
    with pytest.raises(DataError):
        LabelMap(np.array([[0]]), ())


def test_text_embedding_validation(rng):
    TextEmbeddingSet(rng.normal(size=(3, 5)), ("a", "b", "c"))
    with pytest.raises(DataError):
        TextEmbeddingSet(rng.normal(size=(3, 5)), ("a", "b"))
    with pytest.raises(DataError):
        TextEmbeddingSet(np.zeros((2, 4)), ("a", "b"))
    with pytest.raises(DataError):
        TextEmbeddingSet(np.full((2, 4), np.inf), ("a", "b"))


def test_open_vocab_segment_brute_force(rng):
    h, w, n, c = 5, 6, 7, 4
    feat = rng.normal(size=(h, w, n))
    text = TextEmbeddingSet(rng.normal(size=(c, n)), ("a", "b", "c", "d"))
    out = open_vocab_segment(feat, text)
    for i in range(h):
        for j in range(w):
            best, best_cos = 0, -np.inf
            for k in range(c):
                e = text.embeddings[k]
                cos = feat[i, j] @ e / (np.linalg.norm(feat[i, j]) * np.linalg.norm(e))
                if cos > best_cos:
                    best, best_cos = k, cos
            assert out.labels[i, j] == best


def test_open_vocab_ties_and_zero_features(rng):
    n = 4
    e = rng.normal(size=n)
    # duplicated embedding rows tie exactly; argmax picks the lower index
    text = TextEmbeddingSet(np.stack([e, e, -e]), ("x", "y", "z"))
    feat = np.broadcast_to(e, (2, 2, n)).copy()
    out = open_vocab_segment(feat, text)
    assert np.all(out.labels == 0)
    # zero-norm pixels fall back to "Others" when present
    text2 = TextEmbeddingSet(rng.normal(size=(3, n)), ("a", "Others", "b"))
    feat2 = np.zeros((1, 2, n))
    feat2[0, 1] = text2.embeddings[2]
    out2 = open_vocab_segment(feat2, text2)
    assert out2.labels[0, 0] == 1
    assert out2.labels[0, 1] == 2
    # without an "Others" class, zero pixels take the last index
    text3 = TextEmbeddingSet(rng.normal(size=(3, n)), ("a", "b", "c"))
    out3 = open_vocab_segment(np.zeros((1, 1, n)), text3)
    assert out3.labels[0, 0] == 2
    with pytest.raises(DataError):
        open_vocab_segment(np.zeros((2, 2, n + 1)), text3)
    with pytest.raises(DataError):
        open_vocab_segment(np.zeros((2, n)), text3)


def miou_loop_oracle(pred, gt, num_classes):
    keep = (gt != IGNORE_LABEL) & (pred != IGNORE_LABEL)
    p, g = pred[keep], gt[keep]
    ious = []
    for c in range(num_classes):
        tp = fp = fn = 0
        for pi, gi in zip(p, g):
            if pi == c and gi == c:
                tp += 1
            elif pi == c:
                fp += 1
            elif gi == c:
                fn += 1
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious)), float(np.mean(p == g))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_miou_matches_confusion_loop(seed):
    rng = np.random.default_rng(seed)
    names = ("a", "b", "c", "d", "e")
    shape = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
    gt = rng.integers(-1, len(names), size=shape)
    pred = rng.integers(0, len(names), size=shape)
    if not np.any(gt != IGNORE_LABEL):
        gt[0, 0] = 0
    miou, acc = miou_pixel_acc(LabelMap(pred, names), LabelMap(gt, names))
    e_miou, e_acc = miou_loop_oracle(pred, gt, len(names))
    assert miou == pytest.approx(e_miou, abs=1e-12)
    assert acc == pytest.approx(e_acc, abs=1e-12)


def test_miou_perfect_and_absent_classes():
    names = ("a", "b", "c", "d")
    gt = LabelMap(np.array([[0, 1], [1, 0]]), names)
    miou, acc = miou_pixel_acc(gt, gt)
    assert miou == 1.0 and acc == 1.0
    # classes absent from both maps are not averaged in
    pred = LabelMap(np.array([[0, 0], [1, 0]]), names)
    miou, acc = miou_pixel_acc(pred, gt)
    # class 0: tp=2 fp=1 fn=0 -> 2/3; class 1: tp=1 fp=0 fn=1 -> 1/2
    assert miou == pytest.approx((2 / 3 + 1 / 2) / 2, abs=1e-12)
    assert acc == pytest.approx(0.75, abs=1e-12)


def test_miou_errors():
    names = ("a", "b")
    full_ignore = LabelMap(np.full((2, 2), IGNORE_LABEL), names)
    with pytest.raises(DataError):
        miou_pixel_acc(full_ignore, full_ignore)
    with pytest.raises(DataError):
        miou_pixel_acc(LabelMap(np.zeros((2, 2), int), names),
                       LabelMap(np.zeros((2, 2), int), ("a", "x")))
    with pytest.raises(DataError):
        miou_pixel_acc(LabelMap(np.zeros((2, 2), int), names),
                       LabelMap(np.zeros((3, 2), int), names))


def test_depth_rel_tau_reference_points(rng):
    gt = rng.uniform(1.0, 5.0, size=(9, 11))
    rel, tau = depth_rel_tau(gt, gt)
    assert rel == 0.0 and tau == 100.0
    rel, tau = depth_rel_tau(1.02 * gt, gt)
    assert rel == pytest.approx(2.0, abs=1e-9)
    assert tau == 100.0
    rel, tau = depth_rel_tau(1.05 * gt, gt)
    assert rel == pytest.approx(5.0, abs=1e-9)
    assert tau == 0.0
    # non-positive predictions never count toward tau
    pred = gt.copy()
    pred[0, 0] = 0.0
    _, tau = depth_rel_tau(pred, gt)
    assert tau == pytest.approx(100.0 * (gt.size - 1) / gt.size, abs=1e-9)


def test_depth_rel_tau_mask_and_errors(rng):
    gt = rng.uniform(1.0, 2.0, size=(4, 4))
    pred = gt.copy()
    pred[0, 0] = 50.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    rel, tau = depth_rel_tau(pred, gt, mask)
    assert rel == 0.0 and tau == 100.0
    with pytest.raises(DataError):
        depth_rel_tau(pred, gt, np.zeros((4, 4), bool))
    with pytest.raises(DataError):
        depth_rel_tau(pred, gt, np.ones((3, 4), bool))
    with pytest.raises(DataError):
        depth_rel_tau(pred, gt[:3])
    bad = gt.copy()
    bad[1, 1] = 0.0
    with pytest.raises(DataError):
        depth_rel_tau(pred, bad)


def pca_svd_oracle(feat):
    h, w, n = feat.shape
    flat = feat.reshape(-1, n)
    centered = flat - flat.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    evals = svals**2 / flat.shape[0]
    out = np.full((h * w, 3), 0.5)
    floor = max(float(evals[0]), 0.0) * 1e-10
    for c in range(3):
        if c >= len(evals) or evals[c] <= floor or evals[c] <= 0.0:
            continue
        vec = vt[c]
        lead = np.argmax(np.abs(vec))
        if vec[lead] < 0.0:
            vec = -vec
        proj = centered @ vec
        lo, hi = proj.min(), proj.max()
        if hi - lo < 1e-12:
            continue
        out[:, c] = (proj - lo) / (hi - lo)
    return out.reshape(h, w, 3)


def test_pca_matches_svd_route(rng):
    feat = rng.normal(size=(6, 5, 8))
    img = pca_visualize(feat)
    assert img.shape == (6, 5, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    np.testing.assert_allclose(img, pca_svd_oracle(feat), atol=1e-8)


def test_pca_axis_aligned_variances(rng):
    # exactly orthogonal zero-mean channels with variances 9 > 4 > 1 pin the
    # principal axes to the coordinate axes
    m = 400
    z = rng.normal(size=(m, 5))
    q, _ = np.linalg.qr(z - z.mean(axis=0))
    flat = q * np.array([3.0, 2.0, 1.0, 1e-6, 1e-6])
    feat = flat.reshape(20, 20, 5)
    img = pca_visualize(feat).reshape(-1, 3)
    for c in range(3):
        x = flat[:, c]
        expected = (x - x.min()) / (x.max() - x.min())
        np.testing.assert_allclose(img[:, c], expected, atol=1e-6)


def test_pca_rank_deficient_and_constant(rng):
    # one varying direction: channels 1 and 2 of the output stay at 0.5
    base = rng.normal(size=(4, 4, 1))
    feat = np.concatenate([base, 2 * base, -base], axis=2)
    img = pca_visualize(feat)
    assert img[:, :, 0].min() == 0.0 and img[:, :, 0].max() == 1.0
    np.testing.assert_array_equal(img[:, :, 1], 0.5)
    np.testing.assert_array_equal(img[:, :, 2], 0.5)
    np.testing.assert_array_equal(pca_visualize(np.ones((3, 3, 4))), 0.5)


def test_pca_validation():
    with pytest.raises(DataError):
        pca_visualize(np.zeros((1, 2, 5)))
    with pytest.raises(DataError):
        pca_visualize(np.zeros((4, 4, 2)))
    with pytest.raises(DataError):
        pca_visualize(np.full((4, 4, 4), np.nan))
    with pytest.raises(DataError):
        pca_visualize(np.zeros((4, 4)))


def test_default_class_names():
    assert len(DEFAULT_CLASS_NAMES) == 8
    assert DEFAULT_CLASS_NAMES[-1] == "Others"
