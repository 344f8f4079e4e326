"""BSS-EVAL source metrics (SDR / SIR / SAR), NSDR and length-weighted global aggregates.

An estimate is split into

    s_target  projection onto delayed copies (lags 0..L-1) of its own reference
    e_interf  projection onto delayed copies of all references, minus s_target
    e_artif   the remainder

using full-length convolutions, so the three parts have ``n + L - 1``
samples and sum to the zero-padded estimate. The normal equations are
block-Toeplitz and built from FFT cross-correlations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

CAP_DB = 300.0
# parts weaker than this (relative to the estimate) are below solver precision
# and treated as exactly zero
_ZERO_ENERGY = 1e-20


@dataclass(frozen=True)
class DecompositionConfig:
    filter_len: int = 512
    use_filters: bool = True

    def __post_init__(self):
        if self.filter_len < 1:
            raise ValueError("filter_len must be at least 1")


@dataclass
class EvalResult:
    track: str
    source: str
    sdr: float
    sir: float
    sar: float
    nsdr: float
    length: int


def _solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        ridge = 1e-10 * np.trace(gram)
        return np.linalg.lstsq(gram + ridge * np.eye(len(gram)), rhs, rcond=None)[0]


def _xcorr(refs: np.ndarray, other: np.ndarray, lags: int, nfft: int) -> np.ndarray:
    """c[i, j, k] = sum_t refs[i, t] * other[j, t + k] for k in (-lags, lags), wrapped index."""
    fr = np.fft.rfft(refs, nfft)
    fo = np.fft.rfft(other, nfft)
    return np.fft.irfft(np.conj(fr)[:, None, :] * fo[None, :, :], nfft)


def project(estimate: np.ndarray, refs: np.ndarray, filter_len: int) -> np.ndarray:
    """Least-squares projection of ``estimate`` onto {refs[i] delayed by 0..filter_len-1}.

    Returns a signal of length ``n + filter_len - 1``.
    """
    refs = np.atleast_2d(refs)
    k, n = refs.shape
    lags = filter_len
    nfft = 1 << int(math.ceil(math.log2(n + lags - 1)))
    c_rr = _xcorr(refs, refs, lags, nfft)  # (k, k, nfft)
    c_re = _xcorr(refs, estimate[None], lags, nfft)[:, 0]  # (k, nfft)
    pos = np.arange(lags)
    neg = (-pos) % nfft
    gram = np.empty((k * lags, k * lags))
    for i in range(k):
        for j in range(k):
            # G[(i, tau), (j, sigma)] = c_ij(tau - sigma)
            gram[i * lags:(i + 1) * lags, j * lags:(j + 1) * lags] = scipy.linalg.toeplitz(c_rr[i, j, pos], c_rr[i, j, neg])
    rhs = c_re[:, pos].reshape(-1)
    coef = _solve(gram, rhs).reshape(k, lags)
    out = np.zeros(n + lags - 1)
    for i in range(k):
        out += fftconvolve(refs[i], coef[i]) if lags > 1 else refs[i] * coef[i, 0]
    return out


def _gain_projection(estimate: np.ndarray, refs: np.ndarray) -> np.ndarray:
    refs = np.atleast_2d(refs)
    gram = refs @ refs.T
    return _solve(gram, refs @ estimate) @ refs


def decompose(estimate, references, target_index: int, config: DecompositionConfig = DecompositionConfig()):
    """Return ``(s_target, e_interf, e_artif)`` for ``estimate`` scored against ``references[target_index]``."""
    est = np.asarray(estimate, dtype=np.float64)
    refs = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if refs.shape[1] != est.shape[0]:
        raise ValueError(f"estimate has {est.shape[0]} samples, references have {refs.shape[1]}")
    for i, r in enumerate(refs):
        if not np.any(r):
            raise ValueError(f"reference {i} is all zeros")
    if config.use_filters:
        flen = config.filter_len
        s_target = project(est, refs[target_index], flen)
        p_all = project(est, refs, flen)
        est = np.pad(est, (0, flen - 1))
    else:
        target = refs[target_index]
        s_target = (est @ target) / (target @ target) * target
        p_all = _gain_projection(est, refs)
    return s_target, p_all - s_target, est - p_all


def _energy(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def _ratio_db(num: float, den: float) -> float:
    if den == 0.0:
        return CAP_DB if num > 0 else 0.0
    if num == 0.0:
        return -CAP_DB
    return float(np.clip(10 * math.log10(num / den), -CAP_DB, CAP_DB))


def _clean(parts):
    """Zero out interference / artifact parts that sit below solver precision."""
    s, ei, ea = parts
    floor = _ZERO_ENERGY * _energy(s + ei + ea)
    if _energy(ei) <= floor:
        ei = np.zeros_like(ei)
    if _energy(ea) <= floor:
        ea = np.zeros_like(ea)
    return s, ei, ea


def sdr(parts) -> float:
    s, ei, ea = _clean(parts)
    return _ratio_db(_energy(s), _energy(ei + ea))


def sir(parts) -> float:
    s, ei, _ = _clean(parts)
    return _ratio_db(_energy(s), _energy(ei))


def sar(parts) -> float:
    s, ei, ea = _clean(parts)
    return _ratio_db(_energy(s + ei), _energy(ea))


def bss_metrics(estimate, references, target_index: int, config: DecompositionConfig = DecompositionConfig()):
    """(sdr, sir, sar) in dB."""
    parts = decompose(estimate, references, target_index, config)
    return sdr(parts), sir(parts), sar(parts)


def nsdr(estimate, references, target_index: int, mixture, config: DecompositionConfig = DecompositionConfig()) -> float:
    """SDR gain of ``estimate`` over using the raw mixture as the estimate."""
    return sdr(decompose(estimate, references, target_index, config)) - sdr(
        decompose(mixture, references, target_index, config))


def evaluate_track(track: str, estimates: dict, references: dict, mixture: np.ndarray,
                   config: DecompositionConfig = DecompositionConfig()) -> list[EvalResult]:
    """Score every labelled source; estimate ``name`` is always compared to reference ``name``."""
    names = list(references)
    refs = np.stack([np.asarray(references[n], dtype=np.float64) for n in names])
    mix = np.asarray(mixture, dtype=np.float64)
    out = []
    for i, name in enumerate(names):
        parts = decompose(estimates[name], refs, i, config)
        mix_sdr = sdr(decompose(mix, refs, i, config))
        s = sdr(parts)
        out.append(EvalResult(track, name, s, sir(parts), sar(parts), s - mix_sdr, refs.shape[1]))
    return out


def global_metrics(results: Sequence[EvalResult]) -> tuple[float, float, float]:
    """(GNSDR, GSIR, GSAR): means of NSDR, SIR and SAR weighted by track length."""
    if not results:
        raise ValueError("no results to aggregate")
    w = np.array([r.length for r in results], dtype=np.float64)
    agg = [float(np.dot(w, [getattr(r, k) for r in results]) / w.sum()) for k in ("nsdr", "sir", "sar")]
    return agg[0], agg[1], agg[2]


def median_sdr(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("median of an empty list")
    return float(np.median(np.asarray(values, dtype=np.float64)))


def summarize(results: Sequence[EvalResult]) -> dict:
    """Per source: medians of every metric plus the weighted global metrics."""
    summary = {}
    for name in dict.fromkeys(r.source for r in results):
        rows = [r for r in results if r.source == name]
        g = global_metrics(rows)
        summary[name] = {
            "median_sdr": median_sdr([r.sdr for r in rows]),
            "median_sir": median_sdr([r.sir for r in rows]),
            "median_sar": median_sdr([r.sar for r in rows]),
            "median_nsdr": median_sdr([r.nsdr for r in rows]),
            "gnsdr": g[0],
            "gsir": g[1],
            "gsar": g[2],
            "tracks": len(rows),
        }
    return summary
