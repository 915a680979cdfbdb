"""Source utterance references: WAV directories or seeded speech-like signals.

Licensed corpora cannot ship with the package, so a synthetic generator
provides deterministic stand-ins: voiced syllables (harmonics of a gliding
fundamental shaped by two formant resonances) with unvoiced fricative
bursts and pauses, plus a pseudo-word transcript.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .signal import MultichannelAudio
from .wavio import read_wav

__all__ = ["SourceRef", "synthetic_utterance", "synthetic_transcript", "synthetic_pool", "directory_pool", "load_source"]

TARGET_RMS = 0.05

VOCABULARY = (
    "the of and to in is was that for on with as by at from his her they "
    "which one had were this but are not have all their been more said "
    "when there after other about market new people into time year could "
    "first would some over two three price state only most company"
).split()


@dataclass(frozen=True)
class SourceRef:
    """One source utterance: a WAV path or a synthetic seed, with its transcript."""

    id: str
    path: str | None = None
    synth_seed: int | None = None
    duration: float | None = None
    transcript: str = ""

    def __post_init__(self):
        if (self.path is None) == (self.synth_seed is None):
            raise ValueError(f"source {self.id!r} needs exactly one of path or synth_seed")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _syllable(rng, n, sample_rate, f0_base, voiced):
    env = np.sin(np.pi * np.arange(n) / n) ** 1.5
    if not voiced:
        noise = rng.standard_normal(n)
        spec = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        centre = rng.uniform(0.55, 0.85) * sample_rate / 2
        spec *= np.exp(-0.5 * ((freqs - centre) / (0.12 * sample_rate)) ** 2)
        burst = np.fft.irfft(spec, n)
        return 0.3 * env * burst / (np.std(burst) + 1e-12)
    f0 = f0_base * np.exp(np.linspace(rng.uniform(-0.15, 0.15), rng.uniform(-0.2, 0.1), n))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    f1 = rng.uniform(300.0, 850.0)
    f2 = rng.uniform(900.0, 2400.0)
    out = np.zeros(n)
    n_harm = int(0.45 * sample_rate / f0_base)
    for k in range(1, n_harm + 1):
        fk = k * f0
        gain = 1.0 / (1.0 + ((fk - f1) / 90.0) ** 2) + 0.6 / (1.0 + ((fk - f2) / 140.0) ** 2)
        gain += 0.02
        out += gain * np.sin(k * phase)
    return env * out


def _layout(seed, duration):
    """Syllable (start, length, voiced) triples in seconds, plus the word list."""
    rng = np.random.default_rng([seed, 0])
    syllables, words = [], []
    pos = rng.uniform(0.05, 0.2)
    while True:
        n_syll = int(rng.integers(1, 4))
        word_start = pos
        for _ in range(n_syll):
            n = rng.uniform(0.10, 0.28)
            if pos + n > duration:
                break
            syllables.append((pos, n, bool(rng.random() > 0.2)))
            pos += n + rng.uniform(0.0, 0.04)
        if pos == word_start or pos >= duration:
            break
        words.append(VOCABULARY[int(rng.integers(len(VOCABULARY)))])
        pos += rng.uniform(0.04, 0.25)
    return syllables, words


def synthetic_utterance(seed, duration, sample_rate):
    """Speech-like mono signal of ``duration`` seconds and its pseudo-word transcript.

    The result is deterministic in ``seed``, scaled to an RMS of 0.05, and
    the transcript does not depend on ``sample_rate``.
    """
    syllables, words = _layout(seed, duration)
    rng = np.random.default_rng([seed, 1])
    total = int(round(duration * sample_rate))
    f0_base = rng.uniform(95.0, 230.0)
    x = np.zeros(total)
    for start, length, voiced in syllables:
        i0 = int(start * sample_rate)
        n = min(int(length * sample_rate), total - i0)
        if n < 2:
            continue
        x[i0 : i0 + n] += _syllable(rng, n, sample_rate, f0_base, voiced)
    rms = np.sqrt(np.mean(x**2))
    if rms > 0:
        x *= TARGET_RMS / rms
    return x, " ".join(words)


def synthetic_transcript(seed, duration):
    return " ".join(_layout(seed, duration)[1])


def synthetic_pool(count, seed, duration_range=(2.0, 4.0)):
    """``count`` synthetic source references with seeded durations and transcripts."""
    ss = np.random.SeedSequence(seed)
    refs = []
    for i, child in enumerate(ss.spawn(count)):
        s = int(child.generate_state(1, np.uint64)[0])
        dur = float(np.round(np.random.default_rng(s).uniform(*duration_range), 3))
        text = synthetic_transcript(s, dur)
        refs.append(SourceRef(id=f"synth-{i:05d}", synth_seed=s, duration=dur, transcript=text))
    return refs


def directory_pool(directory):
    """Every ``*.wav`` file under ``directory`` (sorted), with ``<stem>.txt`` transcripts if present."""
    directory = Path(directory)
    refs = []
    for wav in sorted(directory.rglob("*.wav")):
        txt = wav.with_suffix(".txt")
        text = txt.read_text(encoding="utf-8").strip() if txt.exists() else ""
        audio = read_wav(wav)
        refs.append(SourceRef(id=wav.stem, path=str(wav), duration=audio.duration, transcript=text))
    if not refs:
        raise ValueError(f"no .wav files found under {directory}")
    return refs


def load_source(ref, sample_rate):
    """Mono float64 samples of ``ref`` at ``sample_rate``."""
    if ref.synth_seed is not None:
        x, _ = synthetic_utterance(ref.synth_seed, ref.duration, sample_rate)
        return MultichannelAudio.mono(x, sample_rate)
    audio = read_wav(ref.path)
    if audio.n_channels != 1:
        raise ValueError(f"source {ref.path} has {audio.n_channels} channels; expected mono")
    if audio.sample_rate != sample_rate:
        raise ValueError(
            f"source {ref.path} is {audio.sample_rate} Hz; the recipe needs {sample_rate} Hz"
        )
    return audio
