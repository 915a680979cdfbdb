"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numpy as np

SUPPORTED_RATES = (8000, 16000)


def check_signal(x, name="signal", allow_silent=True):
    """Return ``x`` as a finite 1-D float64 array.

    Raises
    ------
    ValueError
        If the input is not one-dimensional, is empty, contains NaN/inf, or
        is all zeros while ``allow_silent`` is False.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if not allow_silent and not np.any(arr):
        raise ValueError(f"{name} has zero energy")
    return arr


def check_pair(estimate, reference, allow_silent_estimate=False):
    """Validate an (estimate, reference) pair of equal-length mono signals."""
    ref = check_signal(reference, "reference", allow_silent=False)
    est = check_signal(estimate, "estimate", allow_silent=allow_silent_estimate)
    if est.shape != ref.shape:
        raise ValueError(
            f"estimate and reference lengths differ: {est.size} vs {ref.size}"
        )
    return est, ref


def check_matrix(x, name="samples"):
    """Return ``x`` as a finite 2-D float64 array of shape (channels, length).

    A 1-D input is promoted to a single channel.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be (channels, length), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_sample_rate(sample_rate, supported=None):
    if not isinstance(sample_rate, (int, np.integer)) or sample_rate <= 0:
        raise ValueError(f"sample_rate must be a positive integer, got {sample_rate!r}")
    if supported is not None and sample_rate not in supported:
        raise ValueError(
            f"sample_rate {sample_rate} not supported; expected one of {tuple(supported)}"
        )
    return int(sample_rate)


def check_point(p, name="point"):
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite (x, y, z) triple, got {p!r}")
    return arr
