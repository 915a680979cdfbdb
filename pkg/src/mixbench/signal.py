"""Multichannel audio containers and a perfect-reconstruction STFT."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_matrix, check_sample_rate

__all__ = [
    "MultichannelAudio",
    "StftConfig",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "StftTransformer",
]

WINDOWS = ("sqrt_hann", "hann")


def _readonly(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MultichannelAudio:
    """Time-domain samples of shape ``(channels, length)`` at ``sample_rate``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(check_matrix(self.samples)))
        object.__setattr__(self, "sample_rate", check_sample_rate(self.sample_rate))

    @classmethod
    def mono(cls, x, sample_rate):
        return cls(np.asarray(x, dtype=np.float64)[np.newaxis, :], sample_rate)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.length / self.sample_rate

    def channel(self, index):
        """Single channel as a 1-D array."""
        return self.samples[index]

    def select(self, index):
        """Single channel as a mono ``MultichannelAudio``."""
        return MultichannelAudio(self.samples[index : index + 1], self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    """Frame/hop sizes in samples and the analysis/synthesis window family.

    ``sqrt_hann`` uses a square-root periodic Hann window for both analysis
    and synthesis; ``hann`` analyses with Hann and synthesises with a
    rectangular window. Either way the product window must overlap-add to a
    constant at the given hop, which is checked on construction.
    """

    frame_size: int
    hop_size: int
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not (isinstance(self.frame_size, (int, np.integer))
                and isinstance(self.hop_size, (int, np.integer))):
            raise ValueError("frame_size and hop_size must be integers")
        if not self.frame_size >= self.hop_size >= 1:
            raise ValueError(
                f"need frame_size >= hop_size >= 1, got {self.frame_size}/{self.hop_size}"
            )
        if self.frame_size % 2:
            raise ValueError(f"frame_size must be even, got {self.frame_size}")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; expected one of {WINDOWS}")
        env = self._overlap_envelope()
        if not np.allclose(env, env[0], rtol=1e-10, atol=0) or env[0] <= 0:
            raise ValueError(
                f"window {self.window!r} does not overlap-add to a constant at "
                f"hop {self.hop_size} for frame {self.frame_size}"
            )

    @classmethod
    def from_ms(cls, frame_ms, hop_ms, sample_rate, window="sqrt_hann"):
        """Build a config from millisecond sizes; non-integer sample counts are rejected."""
        sizes = []
        for ms in (frame_ms, hop_ms):
            n = Fraction(str(ms)) * sample_rate / 1000
            if n.denominator != 1:
                raise ValueError(
                    f"{ms} ms at {sample_rate} Hz is {float(n)} samples, not an integer"
                )
            sizes.append(int(n))
        return cls(sizes[0], sizes[1], window)

    @property
    def n_bins(self):
        return self.frame_size // 2 + 1

    @property
    def pad(self):
        return self.frame_size - self.hop_size

    def windows(self):
        """(analysis, synthesis) window arrays."""
        n = np.arange(self.frame_size)
        hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_size)
        if self.window == "sqrt_hann":
            w = np.sqrt(hann)
            return w, w
        return hann, np.ones(self.frame_size)

    def _overlap_envelope(self):
        wa, ws = self.windows()
        prod = wa * ws
        env = np.zeros(self.hop_size)
        for start in range(0, self.frame_size, self.hop_size):
            seg = prod[start : start + self.hop_size]
            env[: seg.size] += seg
        return env

    def overlap_gain(self):
        """Constant value of the summed analysis*synthesis window overlap."""
        return float(self._overlap_envelope()[0])


@dataclass(frozen=True, eq=False)
class ComplexSpectrogram:
    """Complex STFT values of shape ``(channels, frames, frame_size // 2 + 1)``."""

    values: np.ndarray
    config: StftConfig
    original_length: int
    sample_rate: int = field(default=16000)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.ndim != 3:
            raise ValueError(f"spectrogram must be 3-D, got shape {vals.shape}")
        if vals.shape[2] != self.config.n_bins:
            raise ValueError(
                f"bin count {vals.shape[2]} inconsistent with frame_size "
                f"{self.config.frame_size} (expected {self.config.n_bins})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("spectrogram contains non-finite values")
        if self.original_length < 1:
            raise ValueError("original_length must be positive")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def n_frames(self):
        return self.values.shape[1]

    def with_values(self, values):
        return ComplexSpectrogram(values, self.config, self.original_length, self.sample_rate)


def _n_frames(length, config):
    padded = length + 2 * config.pad
    if padded < config.frame_size:
        raise ValueError(
            f"frame_size {config.frame_size} larger than padded signal ({padded} samples)"
        )
    return 1 + -(-(padded - config.frame_size) // config.hop_size)


def stft(audio, config):
    """Short-time Fourier transform of every channel of ``audio``.

    The signal is zero-padded by ``frame_size - hop_size`` samples on both
    ends (and at the tail up to a whole number of hops) so that every
    original sample is covered by a full set of overlapping frames.

    Parameters
    ----------
    audio : MultichannelAudio
    config : StftConfig

    Returns
    -------
    ComplexSpectrogram
        Values of shape ``(channels, frames, frame_size // 2 + 1)``; the
        unnormalized DFT of each windowed frame.
    """
    x = audio.samples
    length = x.shape[1]
    n_frames = _n_frames(length, config)
    total = config.frame_size + (n_frames - 1) * config.hop_size
    padded = np.zeros((x.shape[0], total))
    padded[:, config.pad : config.pad + length] = x
    wa, _ = config.windows()
    idx = np.arange(n_frames)[:, None] * config.hop_size + np.arange(config.frame_size)
    frames = padded[:, idx] * wa
    values = np.fft.rfft(frames, n=config.frame_size, axis=-1)
    return ComplexSpectrogram(values, config, length, audio.sample_rate)


def istft(spec):
    """Weighted overlap-add inverse of :func:`stft`, trimmed to the original length."""
    config = spec.config
    expected = _n_frames(spec.original_length, config)
    if spec.n_frames != expected:
        raise ValueError(
            f"spectrogram has {spec.n_frames} frames, expected {expected} "
            f"for original_length {spec.original_length}"
        )
    _, ws = config.windows()
    frames = np.fft.irfft(spec.values, n=config.frame_size, axis=-1) * ws
    n_ch = frames.shape[0]
    total = config.frame_size + (spec.n_frames - 1) * config.hop_size
    out = np.zeros((n_ch, total))
    for t in range(spec.n_frames):
        start = t * config.hop_size
        out[:, start : start + config.frame_size] += frames[:, t]
    out /= config.overlap_gain()
    out = out[:, config.pad : config.pad + spec.original_length]
    return MultichannelAudio(out, spec.sample_rate)


class StftTransformer(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`stft` / :func:`istft`.

    ``transform`` maps a ``(channels, length)`` array (or a
    ``MultichannelAudio``) to its complex spectrogram array;
    ``inverse_transform`` maps it back to the fitted length.
    """

    def __init__(self, frame_size=256, hop_size=128, window="sqrt_hann", sample_rate=16000):
        self.frame_size = frame_size
        self.hop_size = hop_size
        self.window = window
        self.sample_rate = sample_rate

    def _config(self):
        return StftConfig(self.frame_size, self.hop_size, self.window)

    def _as_audio(self, X):
        if isinstance(X, MultichannelAudio):
            return X
        return MultichannelAudio(X, self.sample_rate)

    def fit(self, X, y=None):
        audio = self._as_audio(X)
        self.config_ = self._config()
        self.n_samples_ = audio.length
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "config_")
        return stft(self._as_audio(X), self.config_).values

    def inverse_transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "config_")
        spec = ComplexSpectrogram(X, self.config_, self.n_samples_, self.sample_rate)
        return istft(spec).samples
