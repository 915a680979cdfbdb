"""WAV reading and writing (16-bit PCM and 32-bit float, mono or multichannel)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ._validation import SUPPORTED_RATES
from .signal import MultichannelAudio

__all__ = ["read_wav", "write_wav", "WavFormatError"]


class WavFormatError(ValueError):
    """The file uses an encoding or sample rate this package does not accept."""


def read_wav(path, supported_rates=SUPPORTED_RATES):
    """Read a WAV file into a float64 ``MultichannelAudio``.

    16-bit PCM is scaled by 1/32768. Any other encoding (8-bit, 24/32-bit
    integer PCM, 64-bit float) raises :class:`WavFormatError`.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported encoding {data.dtype}; expected 16-bit PCM or 32-bit float"
        )
    if supported_rates is not None and rate not in supported_rates:
        raise WavFormatError(f"{path}: sample rate {rate} Hz not in {tuple(supported_rates)}")
    samples = samples.T if samples.ndim == 2 else samples[np.newaxis, :]
    return MultichannelAudio(samples, int(rate))


def write_wav(path, audio, subtype="float32"):
    """Write ``audio`` as 32-bit float (default) or 16-bit PCM (``subtype='pcm16'``).

    PCM output is clipped to [-1, 1).
    """
    data = audio.samples.T
    if audio.n_channels == 1:
        data = data[:, 0]
    if subtype == "float32":
        data = data.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown subtype {subtype!r}; expected 'float32' or 'pcm16'")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, audio.sample_rate, data)
    return path
