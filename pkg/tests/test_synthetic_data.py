import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapfuse.embedding_store import dataset_stats
from gapfuse.errors import ConfigurationError, InputError
from gapfuse.geometry import measure_gap
from gapfuse.synthetic_data import SynthSpec, general_preset, generate, generate_with_stats, medical_preset


def test_zero_gap():
    ds = generate(medical_preset(gap_magnitude=0.0, seed=1))
    assert measure_gap(ds).gap_scalar < 0.05


def test_infeasible_gap():
    with pytest.raises(InputError):
        medical_preset(gap_magnitude=2.5)


def test_infeasible_variance():
    with pytest.raises(InputError, match="infeasible"):
        SynthSpec(dim=512, text_variance=3e-3)


def test_bad_label_skew():
    with pytest.raises(ConfigurationError):
        SynthSpec(label_skew=(0.5, 0.2))


def test_medical_variance_below_general_20_seeds():
    for seed in range(20):
        med = dataset_stats(generate(medical_preset(seed=seed)))
        gen = dataset_stats(generate(general_preset(seed=seed)))
        for mod in ("text", "image"):
            assert med[mod]["mean_variance"] < gen[mod]["mean_variance"]


@pytest.mark.parametrize("preset", [medical_preset, general_preset])
def test_targets_hit(preset):
    spec = preset(seed=3, n_samples=500)
    ds, achieved = generate_with_stats(spec)
    stats = dataset_stats(ds)
    assert stats["text"]["mean_variance"] == pytest.approx(spec.text_variance, rel=0.10)
    assert stats["image"]["mean_variance"] == pytest.approx(spec.image_variance, rel=0.10)
    assert measure_gap(ds).gap_scalar == pytest.approx(spec.gap_magnitude, rel=0.10)
    assert achieved["gap_scalar"] == pytest.approx(spec.gap_magnitude, rel=1e-3)


def test_linear_probe_separable():
    # least-squares linear probe on concatenated embeddings, trained on the train split
    ds = generate(medical_preset(class_separation=3.0, n_samples=1000, seed=0))
    x = np.hstack([ds.image.values, ds.text.values]).astype(np.float64)
    x = (x - x[ds.train_idx].mean(0)) / x[ds.train_idx].std(0)
    x = np.hstack([x, np.ones((x.shape[0], 1))])
    y = 2.0 * ds.labels - 1
    w, *_ = np.linalg.lstsq(x[ds.train_idx], y[ds.train_idx], rcond=None)
    acc = np.mean(np.sign(x[ds.test_idx] @ w) == y[ds.test_idx])
    assert acc >= 0.95


def test_bit_identical_repeat():
    a = generate(general_preset(seed=7, n_classes=3))
    b = generate(general_preset(seed=7, n_classes=3))
    assert np.array_equal(a.image.values, b.image.values)
    assert np.array_equal(a.text.values, b.text.values)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.is_train, b.is_train)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["medical", "general"]), st.integers(2, 5))
def test_generated_data_valid(seed, regime, n_classes):
    preset = medical_preset if regime == "medical" else general_preset
    ds, achieved = generate_with_stats(preset(seed=seed, n_samples=500, n_classes=n_classes))
    assert np.all(np.isfinite(ds.image.values)) and np.all(np.isfinite(ds.text.values))
    assert ds.image.dim == ds.text.dim == 64
    assert set(np.unique(ds.labels)) == set(range(n_classes))
    spec = preset()
    assert achieved["text_variance"] == pytest.approx(spec.text_variance, rel=0.15)
    assert achieved["image_variance"] == pytest.approx(spec.image_variance, rel=0.15)


def test_label_skew():
    ds = generate(medical_preset(label_skew=(0.9, 0.1), n_samples=2000, seed=2))
    assert np.mean(ds.labels == 1) == pytest.approx(0.1, abs=0.03)
