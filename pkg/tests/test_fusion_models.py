import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapfuse.alignment import reg_loss
from gapfuse.errors import ConfigurationError, ParseError, UsageError
from gapfuse.fusion_models import build, forward, load_checkpoint, output_dim, save_checkpoint
from gapfuse.numeric_core import batchnorm_forward, dense_forward, relu, weighted_bce_with_logits, \
    weighted_cross_entropy

from helpers import central_diff, central_diff_smooth, rel_err, relu_pattern


def early_count(di, dt, c):
    out = output_dim(c)
    return (di + dt) * 128 + 128 + 2 * 128 + 128 * out + out


def late_count(di, dt, c):
    out = output_dim(c)
    return di * 64 + 64 + 2 * 64 + dt * 64 + 64 + 2 * 64 + 128 * out + out


CONFIGS = [
    ("early", 512, 512, 2),
    ("early", 768, 4096, 2),
    ("early", 768, 4096, 7),
    ("late_joint", 512, 512, 2),
    ("late_joint", 768, 4096, 7),
    ("late_joint", 3, 5, 4),
]


@pytest.mark.parametrize("kind,di,dt,c", CONFIGS)
def test_param_count_closed_form(kind, di, dt, c):
    formula = early_count if kind == "early" else late_count
    assert build(kind, di, dt, c).n_params == formula(di, dt, c)


def test_reference_sizes():
    mib = 4 / 2 ** 20
    assert round(build("early", 512, 512, 2).n_params * mib, 2) == 0.50
    assert round(build("early", 768, 4096, 2).n_params * mib, 2) == 2.38
    assert round(build("late_joint", 512, 512, 2).n_params * mib, 2) == 0.25
    assert round(build("late_joint", 768, 4096, 2).n_params * mib, 2) == 1.19


def test_build_errors():
    with pytest.raises(ConfigurationError):
        build("middle", 2, 2, 2)
    with pytest.raises(ConfigurationError):
        build("early", 0, 2, 2)


def test_zero_weights_zero_logits():
    m = build("late_joint", 4, 3, 3)
    for p in m.named_parameters().values():
        p[...] = 0
    logits, feats = m.forward(np.ones((5, 4)), np.ones((5, 3)))
    np.testing.assert_array_equal(logits, 0)
    assert feats["image"].shape == (5, 64) and feats["text"].shape == (5, 64)


def test_early_text_zeroed_equivalence():
    rng = np.random.default_rng(0)
    m = build("early", 4, 3, 2, seed=1)
    img, txt = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))
    a, _ = m.forward(img, np.zeros_like(txt))
    w = m.named_parameters()["fusion.0.dense.weight"]
    w[:, 4:] = 0
    b, _ = m.forward(img, txt)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_forward_matches_layer_composition():
    rng = np.random.default_rng(2)
    m = build("late_joint", 5, 4, 3, seed=3, dtype=np.float64)
    img, txt = rng.standard_normal((7, 5)), rng.standard_normal((7, 4))
    m.forward(img, txt, training=True)  # move running stats away from their init
    p = m.named_parameters()
    feats = []
    for name, x in (("image", img), ("text", txt)):
        h = relu(dense_forward(x, p[f"{name}.0.dense.weight"], p[f"{name}.0.dense.bias"]))
        bn = m.blocks[name].layers[3]
        feats.append(batchnorm_forward(h, bn, training=False))
    expected = dense_forward(np.concatenate(feats, axis=1), p["head.dense.weight"], p["head.dense.bias"])
    got, _ = forward(m, img, txt, phase="eval")
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_dim_mismatch_names_modality():
    m = build("early", 4, 3, 2)
    with pytest.raises(ConfigurationError, match="text"):
        m.forward(np.zeros((2, 4)), np.zeros((2, 5)))
    with pytest.raises(ConfigurationError, match="image"):
        m.forward(np.zeros((2, 1)), np.zeros((2, 3)))


def test_backward_requires_forward():
    m = build("early", 2, 2, 2)
    with pytest.raises(UsageError):
        m.backward(np.zeros((1, 1)))
    m.forward(np.ones((2, 2)), np.ones((2, 2)), training=False)
    with pytest.raises(UsageError):
        m.backward(np.zeros((2, 1)))


def test_zero_loss_grad_zero_param_grads():
    rng = np.random.default_rng(0)
    m = build("late_joint", 3, 3, 2)
    m.forward(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)), training=True)
    for g in m.backward(np.zeros((4, 1))).values():
        assert not np.any(g)


def _loss(m, logits, y, w):
    if m.out_dim == 1:
        return weighted_bce_with_logits(logits, y, w)
    return weighted_cross_entropy(logits, y, w)


GRAD_CASES = [("early", 2), ("early", 3), ("late_joint", 2), ("late_joint", 4)]


def _batch(kind, c, seed, dtype):
    rng = np.random.default_rng(seed)
    m = build(kind, 3, 2, c, seed=seed + 1, dtype=dtype)
    img = rng.standard_normal((4, 3))
    txt = rng.standard_normal((4, 2))
    y = np.array([0, 1, c - 1, 1])
    w = rng.uniform(0.5, 1.5, c)
    return m, img, txt, y, w


def _analytic(m, img, txt, y, w):
    logits, _ = m.forward(img, txt, training=True)
    _, g = _loss(m, logits, y, w)
    return {k: v.astype(np.float64) for k, v in m.backward(g).items()}


@pytest.mark.parametrize("kind,c", GRAD_CASES)
@pytest.mark.parametrize("seed", [4, 11, 23])
def test_whole_model_gradients_float64(kind, c, seed):
    m, img, txt, y, w = _batch(kind, c, seed, np.float64)

    def f():
        return _loss(m, m.forward(img, txt, training=True)[0], y, w)[0]

    analytic = _analytic(m, img, txt, y, w)
    n_valid = n_total = 0
    for name, p in m.named_parameters().items():
        num, valid = central_diff_smooth(f, lambda: relu_pattern(m), p, 1e-6)
        assert rel_err(analytic[name][valid], num[valid]) < 1e-5, name
        n_valid += valid.sum()
        n_total += valid.size
    # a +-1e-6 step almost never crosses a ReLU kink
    assert n_valid >= 0.99 * n_total


@pytest.mark.parametrize("kind,c", GRAD_CASES)
def test_whole_model_gradients_float32_precision(kind, c):
    # the 32-bit backward pass against the (finite-difference verified) 64-bit one on identical weights
    m64, img, txt, y, w = _batch(kind, c, 4, np.float64)
    m32 = build(kind, 3, 2, c, seed=5, dtype=np.float32)
    for k, p in m32.named_parameters().items():
        p[...] = m64.named_parameters()[k]
    for k, p in m64.named_parameters().items():
        p[...] = m32.named_parameters()[k]  # both hold exactly the float32-representable values
    g64 = _analytic(m64, img, txt, y, w)
    g32 = _analytic(m32, img.astype(np.float32), txt.astype(np.float32), y, w)
    for name in g64:
        assert rel_err(g32[name], g64[name]) < 1e-4, name


def test_reg_gradient_routed_through_branches():
    rng = np.random.default_rng(6)
    m = build("late_joint", 3, 3, 2, seed=7, dtype=np.float64)
    img, txt = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    weight = 0.7

    def f():
        _, feats = m.forward(img, txt, training=True)
        return weight * reg_loss(feats["text"], feats["image"])[0]

    _, feats = m.forward(img, txt, training=True)
    _, gt, gi = reg_loss(feats["text"], feats["image"])
    grads = m.backward(np.zeros((4, 1)), {"text": weight * gt, "image": weight * gi})
    analytic = {k: v.copy() for k, v in grads.items()}
    for name, p in m.named_parameters().items():
        if name.startswith("head"):
            assert not np.any(analytic[name])
            continue
        num = central_diff(f, p, 1e-6)
        np.testing.assert_allclose(analytic[name], num, rtol=1e-5, atol=1e-8, err_msg=name)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_early_eval_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    m = build("early", 4, 3, 3, seed=seed)
    img, txt = rng.standard_normal((8, 4)), rng.standard_normal((8, 3))
    m.forward(img, txt, training=True)
    perm = rng.permutation(8)
    a, _ = m.forward(img, txt)
    b, _ = m.forward(img[perm], txt[perm])
    np.testing.assert_allclose(a[perm], b, atol=1e-6)


def test_identical_branches_identical_features():
    rng = np.random.default_rng(1)
    m = build("late_joint", 5, 5, 2)
    params = m.named_parameters()
    for k in list(params):
        if k.startswith("text."):
            params[k][...] = params["image." + k[5:]]
    x = rng.standard_normal((6, 5))
    _, feats = m.forward(x, x, training=True)
    np.testing.assert_array_equal(feats["image"], feats["text"])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = build("late_joint", 4, 6, 3, seed=2)
    img, txt = rng.standard_normal((5, 4)), rng.standard_normal((5, 6))
    m.forward(img, txt, training=True)
    save_checkpoint(m, tmp_path / "m.npz", extra={"epoch": 3})
    back = load_checkpoint(tmp_path / "m.npz")
    assert back.config() == m.config()
    for k, v in m.named_parameters().items():
        np.testing.assert_array_equal(back.named_parameters()[k], v)
    np.testing.assert_array_equal(back.forward(img, txt)[0], m.forward(img, txt)[0])


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path / "x.npz")
