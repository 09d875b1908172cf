"""GradCAM maps: upsampling oracle, CAM equivalence, normalisation."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligned_xai import gradcam, model, nn
from aligned_xai.errors import ContractError, EmptyInputError
from aligned_xai.gradcam import Normalization

from _oracles import bilinear_direct
from test_model import TINY_ARCH, _batch


# ---------------------------------------------------------------------------
# Bilinear upsampling
# ---------------------------------------------------------------------------


def test_upsample_matches_direct_formula(rng):
    for _ in range(30):
        h_in, w_in = rng.integers(2, 9, size=2)
        h_out, w_out = rng.integers(2, 33, size=2)
        src = rng.random((h_in, w_in))
        got = gradcam.upsample_bilinear(src, (int(h_out), int(w_out)))
        want = bilinear_direct(src, (int(h_out), int(w_out)))
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_upsample_identity_size_is_exact_copy(rng):
    src = rng.random((5, 7))
    assert np.array_equal(gradcam.upsample_bilinear(src, (5, 7)), src)


def test_upsample_preserves_constants():
    src = np.full((3, 4), 2.5)
    out = gradcam.upsample_bilinear(src, (12, 20))
    assert np.allclose(out, 2.5, rtol=0, atol=1e-12)


def test_upsample_contracts():
    with pytest.raises(ContractError):
        gradcam.upsample_bilinear(np.zeros((2, 2, 2)), (4, 4))
    with pytest.raises(ContractError):
        gradcam.upsample_bilinear(np.zeros((2, 2)), (0, 4))


@settings(max_examples=60, deadline=None)
@given(
    st.integers(2, 6), st.integers(2, 6), st.integers(2, 24), st.integers(2, 24),
    st.integers(0, 2**31 - 1),
)
def test_upsample_respects_value_bounds(h_in, w_in, h_out, w_out, seed):
    # Interpolation is a convex combination: output stays inside [min, max].
    src = np.random.default_rng(seed).random((h_in, w_in))
    out = gradcam.upsample_bilinear(src, (h_out, w_out))
    assert out.min() >= src.min() - 1e-12
    assert out.max() <= src.max() + 1e-12


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


def test_normalize_map_modes(rng):
    values = rng.random((6, 6)) + 0.5
    out = gradcam.normalize_map(values, Normalization.MAX_ONE)
    assert out.max() == pytest.approx(1.0)
    assert np.allclose(out * values.max(), values)
    assert gradcam.normalize_map(values, Normalization.RAW) is values
    zeros = np.zeros((4, 4))
    assert np.array_equal(gradcam.normalize_map(zeros, Normalization.MAX_ONE), zeros)


# ---------------------------------------------------------------------------
# The maps themselves
# ---------------------------------------------------------------------------


def _trained_toy(rng):
    params = model.init_params(TINY_ARCH, seed=21, dtype=np.float64)
    params.head_w = rng.normal(size=params.head_w.shape)
    params.head_b = rng.normal(size=params.head_b.shape)
    return params


def test_raw_map_equals_weighted_activation_sum(rng):
    # With a GAP + linear head the channel weights are exactly the head
    # column over the activation pixel count, so the whole map has a short
    # closed form to check against.
    params = _trained_toy(rng)
    x, _ = _batch(rng, TINY_ARCH, n=4)
    maps = gradcam.gradcam_batch(params, x, 1, Normalization.RAW)
    _, cache = model.forward(params, x, want_cache=True)
    acts = cache.target_activations
    th, tw = TINY_ARCH.target_map_size
    alpha = params.head_w[:, 1] / (th * tw)
    for i in range(x.shape[0]):
        coarse = nn.relu(np.einsum("hwc,c->hw", acts[i], alpha))
        want = gradcam.upsample_bilinear(coarse.astype(np.float32), TINY_ARCH.image_size)
        assert np.allclose(maps[i], want, rtol=1e-6, atol=1e-9)


def test_maps_are_nonnegative_and_input_sized(rng):
    params = _trained_toy(rng)
    x, _ = _batch(rng, TINY_ARCH, n=5)
    maps = gradcam.gradcam_batch(params, x, 0)
    assert maps.shape == (5, 16, 16)
    assert maps.dtype == np.float32
    assert maps.min() >= 0.0


def test_max_one_normalises_per_sample(rng):
    params = _trained_toy(rng)
    x, _ = _batch(rng, TINY_ARCH, n=6)
    maps = gradcam.gradcam_batch(params, x, 0, Normalization.MAX_ONE)
    for m in maps:
        assert m.max() == pytest.approx(1.0) or m.max() == 0.0


def test_chunking_does_not_change_maps(rng):
    params = _trained_toy(rng)
    x, _ = _batch(rng, TINY_ARCH, n=7)
    a = gradcam.gradcam_batch(params, x, 1, Normalization.RAW, chunk=2)
    b = gradcam.gradcam_batch(params, x, 1, Normalization.RAW, chunk=64)
    assert np.allclose(a, b, rtol=1e-10)


def test_all_negative_weights_give_zero_map(rng):
    # ReLU activations are non-negative; a wholly negative head column must
    # produce an identically zero map, not a negative one.
    params = _trained_toy(rng)
    params.head_w[:, 0] = -np.abs(params.head_w[:, 0]) - 0.1
    x, _ = _batch(rng, TINY_ARCH, n=3)
    maps = gradcam.gradcam_batch(params, x, 0, Normalization.RAW)
    assert np.all(maps == 0.0)


def test_explain_samples_records(rng):
    params = _trained_toy(rng)
    x, _ = _batch(rng, TINY_ARCH, n=3)
    recs = gradcam.explain_samples(params, x, ["a", "b", "c"], 0, "lesion")
    assert [r.sample_id for r in recs] == ["a", "b", "c"]
    assert all(r.label_name == "lesion" for r in recs)
    assert all(r.values.shape == (16, 16) for r in recs)
    with pytest.raises(ContractError):
        gradcam.explain_samples(params, x, ["a"], 0, "lesion")


def test_empty_batch_raises(rng):
    params = _trained_toy(rng)
    with pytest.raises(EmptyInputError):
        gradcam.gradcam_batch(params, np.zeros((0, 16, 16, 1)), 0)
