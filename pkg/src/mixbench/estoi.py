"""Extended short-time objective intelligibility (eSTOI).

The signals are analysed at their native rate with 25.6 ms Hann frames
(50% overlap) and grouped into 1/3-octave bands from 150 Hz. Frames more
than 40 dB below the loudest reference frame are discarded, and band
envelopes are compared over sliding 30-frame (384 ms) segments. Each
segment is normalized along time (rows) and then across bands (columns),
and the score is the mean column correlation.

At 8 kHz only the bands lying wholly below Nyquist are used.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from ._validation import SUPPORTED_RATES, check_pair, check_sample_rate

__all__ = ["estoi", "third_octave_matrix", "EstoiTooShortError"]

N_SEGMENT = 30
DYN_RANGE_DB = 40.0
MIN_FREQ = 150.0
MAX_BANDS = 15


class EstoiTooShortError(ValueError):
    """Fewer active frames than one analysis segment."""


def _frame_params(sample_rate):
    hop = int(round(0.0128 * sample_rate))
    frame = 2 * hop
    nfft = 1 << int(np.ceil(np.log2(2 * frame)))
    return frame, hop, nfft


def third_octave_matrix(sample_rate, nfft, min_freq=MIN_FREQ, max_bands=MAX_BANDS):
    """Binary ``(bands, nfft // 2 + 1)`` matrix grouping FFT bins into 1/3-octave bands.

    Bands whose upper edge exceeds Nyquist are dropped.
    """
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    k = np.arange(max_bands)
    lows = min_freq * 2.0 ** ((2 * k - 1) / 6.0)
    highs = min_freq * 2.0 ** ((2 * k + 1) / 6.0)
    keep = highs <= sample_rate / 2
    lows, highs = lows[keep], highs[keep]
    obm = np.zeros((lows.size, freqs.size))
    for i, (lo, hi) in enumerate(zip(lows, highs)):
        a = int(np.argmin(np.abs(freqs - lo)))
        b = int(np.argmin(np.abs(freqs - hi)))
        obm[i, a:b] = 1.0
    return obm


def _frames(x, frame, hop):
    if x.size < frame:
        return np.empty((0, frame))
    return sliding_window_view(x, frame)[::hop]


def _remove_silent(x, y, frame, hop, window):
    xf = _frames(x, frame, hop) * window
    yf = _frames(y, frame, hop) * window
    energy = np.sqrt(np.sum(xf**2, axis=1))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(energy)
    keep = db > db.max() - DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    n = xf.shape[0]
    length = (n - 1) * hop + frame if n else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(n):
        xs[i * hop : i * hop + frame] += xf[i]
        ys[i * hop : i * hop + frame] += yf[i]
    return xs, ys


def _band_envelopes(x, frame, hop, nfft, window, obm):
    spec = np.fft.rfft(_frames(x, frame, hop) * window, n=nfft, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def _normalize(v, axis):
    """Zero-mean, unit-norm along ``axis``; all-zero slices stay zero."""
    v = v - v.mean(axis=axis, keepdims=True)
    norm = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, v / safe, 0.0)


def estoi(estimate, reference, sample_rate):
    """eSTOI score of ``estimate`` against ``reference``, in [-1, 1].

    Parameters
    ----------
    estimate, reference : array_like
        Equal-length mono signals.
    sample_rate : {8000, 16000}

    Raises
    ------
    EstoiTooShortError
        If fewer than 30 active frames remain after silence removal.
    """
    sample_rate = check_sample_rate(sample_rate, SUPPORTED_RATES)
    est, ref = check_pair(estimate, reference, allow_silent_estimate=True)
    frame, hop, nfft = _frame_params(sample_rate)
    if ref.size < frame:
        raise EstoiTooShortError(f"signal of {ref.size} samples is shorter than one {frame}-sample frame")
    window = get_window("hann", frame, fftbins=True)
    ref_s, est_s = _remove_silent(ref, est, frame, hop, window)
    obm = third_octave_matrix(sample_rate, nfft)
    x = _band_envelopes(ref_s, frame, hop, nfft, window, obm)
    y = _band_envelopes(est_s, frame, hop, nfft, window, obm)
    if x.shape[1] < N_SEGMENT:
        raise EstoiTooShortError(
            f"{x.shape[1]} active frames; one {N_SEGMENT}-frame segment is required"
        )
    # (segments, bands, N_SEGMENT)
    xs = sliding_window_view(x, N_SEGMENT, axis=1)
    ys = sliding_window_view(y, N_SEGMENT, axis=1)
    xn = _normalize(_normalize(xs, axis=2), axis=1)
    yn = _normalize(_normalize(ys, axis=2), axis=1)
    per_segment = np.sum(xn * yn, axis=(1, 2)) / N_SEGMENT
    return float(np.clip(per_segment.mean(), -1.0, 1.0))
