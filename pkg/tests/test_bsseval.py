import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgsep.bsseval import (
    CAP_DB,
    DecompositionConfig,
    EvalResult,
    bss_metrics,
    decompose,
    evaluate_track,
    global_metrics,
    median_sdr,
    nsdr,
    project,
    sar,
    sdr,
    sir,
    summarize,
)


def delay_matrix(refs, flen):
    """Columns are every reference delayed by 0..flen-1, zero-padded to n + flen - 1."""
    refs = np.atleast_2d(refs)
    k, n = refs.shape
    cols = []
    for r in refs:
        for tau in range(flen):
            c = np.zeros(n + flen - 1)
            c[tau:tau + n] = r
            cols.append(c)
    return np.stack(cols, axis=1)


def lstsq_projection(est, refs, flen):
    a = delay_matrix(refs, flen)
    y = np.pad(est, (0, flen - 1))
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return a @ coef


def orthogonal_noise(rng, refs, flen, energy):
    """White noise with its component in the span of all delayed references removed (Gram-Schmidt)."""
    n = np.atleast_2d(refs).shape[1]
    # rows past n only ever meet the zero padding of the estimate
    q, _ = np.linalg.qr(delay_matrix(refs, flen)[:n])
    z = rng.standard_normal(n)
    z -= q @ (q.T @ z)
    return z * np.sqrt(energy / (z @ z))


@pytest.fixture
def sources():
    rng = np.random.default_rng(0)
    return rng.standard_normal((2, 2000))


# ---------------------------------------------------------------- projection


@pytest.mark.parametrize("flen", [1, 4, 16])
def test_projection_matches_direct_least_squares(flen):
    rng = np.random.default_rng(flen)
    refs = rng.standard_normal((2, 300))
    est = rng.standard_normal(300)
    np.testing.assert_allclose(project(est, refs, flen), lstsq_projection(est, refs, flen), atol=1e-9)
    np.testing.assert_allclose(project(est, refs[0], flen), lstsq_projection(est, refs[0], flen), atol=1e-9)


def test_estimate_equal_to_target(sources):
    parts = decompose(sources[0], sources, 0, DecompositionConfig(filter_len=32))
    scale = np.linalg.norm(sources[0])
    assert np.linalg.norm(parts[1]) < 1e-9 * scale
    assert np.linalg.norm(parts[2]) < 1e-9 * scale
    assert sdr(parts) == sir(parts) == sar(parts) == CAP_DB


def test_target_plus_other_reference():
    rng = np.random.default_rng(5)
    refs = rng.standard_normal((2, 8000))  # 1 s at 8 kHz
    est = refs[0] + refs[1]
    s, ei, ea = decompose(est, refs, 0, DecompositionConfig(filter_len=64))
    n = 8000
    expected_interf = lstsq_projection(est, refs, 64) - lstsq_projection(est, refs[0], 64)
    np.testing.assert_allclose(ei, expected_interf, atol=1e-8)
    assert np.linalg.norm(ea) < 1e-9 * np.linalg.norm(est)
    # 64 free lags of the target absorb ~64/n of the other source's energy
    assert np.linalg.norm(ei[:n] - refs[1]) < 0.15 * np.linalg.norm(refs[1])
    assert np.linalg.norm(ei[n:]) < 0.05 * np.linalg.norm(refs[1])


def test_orthogonal_noise_lands_in_artifacts():
    rng = np.random.default_rng(2)
    refs = rng.standard_normal((2, 600))
    noise = orthogonal_noise(rng, refs, 8, energy=0.01 * refs[0] @ refs[0])
    s, ei, ea = decompose(refs[0] + noise, refs, 0, DecompositionConfig(filter_len=8))
    np.testing.assert_allclose(ea[:600], noise, atol=1e-9)
    np.testing.assert_allclose(s[:600], refs[0], atol=1e-9)


def test_constructed_artifact_gives_20db():
    rng = np.random.default_rng(3)
    refs = rng.standard_normal((2, 600))
    noise = orthogonal_noise(rng, refs, 8, energy=(refs[0] @ refs[0]) / 100)
    parts = decompose(refs[0] + noise, refs, 0, DecompositionConfig(filter_len=8))
    assert abs(sdr(parts) - 20.0) <= 0.01
    assert abs(sar(parts) - 20.0) <= 0.01
    assert sir(parts) == CAP_DB


@given(seed=st.integers(0, 10_000), flen=st.sampled_from([1, 3, 16]), alpha=st.floats(0.05, 20.0))
@settings(max_examples=20, deadline=None)
def test_decomposition_properties(seed, flen, alpha):
    rng = np.random.default_rng(seed)
    refs = rng.standard_normal((2, 400))
    est = 0.8 * refs[0] + 0.3 * refs[1] + 0.2 * rng.standard_normal(400)
    cfg = DecompositionConfig(filter_len=flen)
    s, ei, ea = decompose(est, refs, 0, cfg)
    padded = np.pad(est, (0, flen - 1))
    # additivity
    assert np.linalg.norm(s + ei + ea - padded) <= 1e-9 * np.linalg.norm(padded)
    # orthogonality relative to energies
    energy = padded @ padded
    assert abs(s @ ei) <= 1e-6 * energy
    assert abs((s + ei) @ ea) <= 1e-6 * energy
    # energy ordering
    m = bss_metrics(est, refs, 0, cfg)
    assert m[2] >= m[0] - 1e-9 and m[1] >= m[0] - 1e-9
    # scale invariance
    np.testing.assert_allclose(bss_metrics(alpha * est, refs, 0, cfg), m, atol=1e-8)


def test_filter_len_one_matches_scalar_path():
    rng = np.random.default_rng(7)
    refs = rng.standard_normal((3, 1000))
    est = np.array([0.7, 0.2, -0.4]) @ refs + 0.1 * rng.standard_normal(1000)
    filt = decompose(est, refs, 1, DecompositionConfig(filter_len=1, use_filters=True))
    gain = decompose(est, refs, 1, DecompositionConfig(filter_len=1, use_filters=False))
    for a, b in zip(filt, gain):
        assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(est)


def test_zero_reference_rejected(sources):
    refs = sources.copy()
    refs[1] = 0
    with pytest.raises(ValueError, match="all zeros"):
        decompose(sources[0], refs, 0)


def test_length_mismatch_rejected(sources):
    with pytest.raises(ValueError):
        decompose(sources[0][:-1], sources, 0)


def test_singular_system_is_regularised():
    rng = np.random.default_rng(1)
    r = rng.standard_normal(500)
    refs = np.stack([r, 2 * r])  # linearly dependent
    s, ei, ea = decompose(r + 0.1 * rng.standard_normal(500), refs, 0, DecompositionConfig(filter_len=4))
    assert np.all(np.isfinite(s)) and np.all(np.isfinite(ei)) and np.all(np.isfinite(ea))


# ---------------------------------------------------------------- NSDR


def test_nsdr_of_mixture_is_exactly_zero(sources):
    mix = sources.sum(axis=0)
    assert nsdr(mix, sources, 0, mix, DecompositionConfig(filter_len=16)) == 0.0


def test_nsdr_of_reference_is_cap_minus_mixture_sdr(sources):
    mix = sources.sum(axis=0)
    cfg = DecompositionConfig(filter_len=16)
    value = nsdr(sources[0], sources, 0, mix, cfg)
    assert value == CAP_DB - sdr(decompose(mix, sources, 0, cfg))
    assert value > 0


# ---------------------------------------------------------------- aggregates


def _r(nsdr_value, length, sir_value=0.0, sar_value=0.0, source="voice"):
    return EvalResult("t", source, 0.0, sir_value, sar_value, nsdr_value, length)


def test_global_single_track_equals_track():
    assert global_metrics([_r(3.5, 100, 7.0, 9.0)]) == (3.5, 7.0, 9.0)


def test_global_weighted_mean():
    assert global_metrics([_r(0.0, 1), _r(4.0, 3)])[0] == 3.0


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=10), st.integers(1, 10_000))
@settings(max_examples=30, deadline=None)
def test_global_equal_lengths_is_plain_mean(values, length):
    g = global_metrics([_r(v, length) for v in values])[0]
    assert g == pytest.approx(np.mean(values), abs=1e-9)


def test_global_empty_rejected():
    with pytest.raises(ValueError):
        global_metrics([])


def test_median():
    assert median_sdr([1, 2, 3]) == 2
    assert median_sdr([1, 2, 3, 4]) == 2.5
    with pytest.raises(ValueError):
        median_sdr([])


def test_evaluate_track_and_summary(sources):
    mix = sources.sum(axis=0)
    refs = {"a": sources[0], "b": sources[1]}
    est = {"a": sources[0] + 0.1 * sources[1], "b": sources[1] + 0.1 * sources[0]}
    res = evaluate_track("x", est, refs, mix, DecompositionConfig(filter_len=8))
    assert [r.source for r in res] == ["a", "b"]
    assert all(r.nsdr > 0 and r.length == 2000 for r in res)
    summ = summarize(res + evaluate_track("y", est, refs, mix, DecompositionConfig(filter_len=8)))
    assert summ["a"]["tracks"] == 2
    assert summ["a"]["gnsdr"] == pytest.approx(res[0].nsdr)
