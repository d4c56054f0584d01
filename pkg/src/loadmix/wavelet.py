"""Orthonormal Haar analysis of 48-sample day curves.

A day of half-hourly reads has 48 = 3 * 2**4 samples, so four dyadic levels
divide it exactly and leave three approximation coefficients.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

N_SLOTS = 48
LEVEL = 4
BANDS = ("A4", "D4", "D3", "D2", "D1")
BAND_SIZES = {"A4": 3, "D4": 3, "D3": 6, "D2": 12, "D1": 24}

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class WaveletDecomp:
    a4: np.ndarray
    d4: np.ndarray
    d3: np.ndarray
    d2: np.ndarray
    d1: np.ndarray

    def band(self, name):
        return getattr(self, name.lower())

    def as_vector(self):
        """All 48 coefficients, coarse to fine."""
        return np.concatenate([self.a4, self.d4, self.d3, self.d2, self.d1], axis=-1)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != N_SLOTS:
            raise DimensionError(f"expected {N_SLOTS} coefficients, got {v.shape[-1]}")
        parts, start = [], 0
        for name in BANDS:
            parts.append(v[..., start:start + BAND_SIZES[name]])
            start += BAND_SIZES[name]
        return cls(*parts)


@dataclass(frozen=True)
class PreprocessSpec:
    """mode 1: centre, keep (A4, D4, D3); mode 2: keep (D4, D3)."""

    mode: int = 2

    def __post_init__(self):
        if self.mode not in (1, 2):
            raise ConfigError(f"preprocessing mode must be 1 or 2, got {self.mode!r}")

    @property
    def dim(self):
        return 12 if self.mode == 1 else 9

    @property
    def bands(self):
        return ("A4", "D4", "D3") if self.mode == 1 else ("D4", "D3")

    def feature_labels(self):
        """Names like ``D4_1``, one per feature, in feature-vector order."""
        return [f"{b}_{i + 1}" for b in self.bands for i in range(BAND_SIZES[b])]


def _values(curve):
    s = np.asarray(getattr(curve, "values", curve), dtype=float)
    if s.shape[-1] != N_SLOTS:
        raise DimensionError(f"day curve must have {N_SLOTS} samples, got {s.shape[-1]}")
    return s


def haar_dwt(curve):
    """Level-4 Haar transform. Accepts a DayCurve or an array ``(..., 48)``.

    Detail coefficients use ``(s[2i] - s[2i+1]) / sqrt(2)``.
    """
    a = _values(curve)
    details = []
    for _ in range(LEVEL):
        even, odd = a[..., 0::2], a[..., 1::2]
        details.append((even - odd) / _SQRT2)
        a = (even + odd) / _SQRT2
    d1, d2, d3, d4 = details
    return WaveletDecomp(a4=a, d4=d4, d3=d3, d2=d2, d1=d1)


def haar_idwt(decomp):
    """Exact inverse of :func:`haar_dwt`; returns an array ``(..., 48)``."""
    a = np.asarray(decomp.a4, dtype=float)
    for d in (decomp.d4, decomp.d3, decomp.d2, decomp.d1):
        d = np.asarray(d, dtype=float)
        out = np.empty(a.shape[:-1] + (2 * a.shape[-1],))
        out[..., 0::2] = (a + d) / _SQRT2
        out[..., 1::2] = (a - d) / _SQRT2
        a = out
    return a


def reconstruct_band(decomp, band):
    """Time-domain contribution of one band; the five bands sum to the signal."""
    band = band.upper()
    if band not in BANDS:
        raise ConfigError(f"unknown band {band!r}")
    parts = {name: np.zeros_like(np.asarray(decomp.band(name), dtype=float)) for name in BANDS}
    parts[band] = np.asarray(decomp.band(band), dtype=float)
    return haar_idwt(WaveletDecomp(*(parts[name] for name in BANDS)))


def preprocess(curve, spec):
    """Feature vector of a day curve (or a stack of them) under ``spec``."""
    if not isinstance(spec, PreprocessSpec):
        spec = PreprocessSpec(int(spec))
    s = _values(curve)
    if spec.mode == 1:
        s = s - s.mean(axis=-1, keepdims=True)
    dec = haar_dwt(s)
    return np.concatenate([dec.band(b) for b in spec.bands], axis=-1)


def inverse_preprocess(features, spec, level=None, a4=None):
    """Rebuild a denoised 48-slot curve from a feature vector.

    D2 and D1 are zero. For mode 1 the curve mean is restored by adding
    ``level``; for mode 2 the dropped approximation is supplied as ``a4``.
    """
    if not isinstance(spec, PreprocessSpec):
        spec = PreprocessSpec(int(spec))
    f = np.asarray(features, dtype=float)
    if f.shape[-1] != spec.dim:
        raise DimensionError(f"expected {spec.dim} features, got {f.shape[-1]}")
    lead = f.shape[:-1]
    zeros = {name: np.zeros(lead + (BAND_SIZES[name],)) for name in BANDS}
    if spec.mode == 1:
        zeros["A4"], zeros["D4"], zeros["D3"] = f[..., :3], f[..., 3:6], f[..., 6:12]
    else:
        zeros["D4"], zeros["D3"] = f[..., :3], f[..., 3:9]
        if a4 is not None:
            zeros["A4"] = np.broadcast_to(np.asarray(a4, dtype=float), lead + (3,))
    s = haar_idwt(WaveletDecomp(*(zeros[name] for name in BANDS)))
    if spec.mode == 1 and level is not None:
        s = s + np.asarray(level, dtype=float)[..., None]
    return s
