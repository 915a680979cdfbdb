"""Reference separators and the file contract for external ones.

``passthrough`` is the unprocessed lower bound, ``oracle_direct_path`` the
ceiling, and ``ideal_mask`` sits in between. Every separator returns one
mono estimate per speaker at the reference microphone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .signal import MultichannelAudio, StftConfig, istft, stft
from .wavio import read_wav

__all__ = [
    "SeparationOutput",
    "MASK_KINDS",
    "passthrough",
    "oracle_direct_path",
    "ideal_mask",
    "load_external",
    "Passthrough",
    "OracleDirectPath",
    "IdealMask",
    "ExternalSeparator",
    "make_separator",
]

logger = logging.getLogger(__name__)

MASK_EPS = 1e-8
MASK_KINDS = ("irm", "ibm", "complex_mapping")


@dataclass(frozen=True, eq=False)
class SeparationOutput:
    """C mono estimates of equal length and a provenance tag."""

    estimates: tuple
    provenance: str

    def __post_init__(self):
        ests = tuple(self.estimates)
        if not ests:
            raise ValueError("at least one estimate is required")
        lengths = {e.length for e in ests}
        if len(lengths) != 1:
            raise ValueError(f"estimates differ in length: {sorted(lengths)}")
        if any(e.n_channels != 1 for e in ests):
            raise ValueError("estimates must be mono")
        object.__setattr__(self, "estimates", ests)

    @property
    def n_sources(self):
        return len(self.estimates)

    def as_array(self):
        """Estimates stacked to ``(C, length)``."""
        return np.stack([e.channel(0) for e in self.estimates])


def _ref(audio, q):
    return audio.select(q)


def passthrough(bundle):
    """C copies of the mixture's reference channel."""
    q = bundle.reference_index
    y = _ref(bundle.mixture, q)
    return SeparationOutput(tuple(y for _ in bundle.direct), "unprocessed")


def oracle_direct_path(bundle):
    """The direct-path images at the reference microphone."""
    q = bundle.reference_index
    return SeparationOutput(tuple(_ref(s, q) for s in bundle.direct), "oracle_direct")


def ideal_mask(bundle, config=None, kind="irm", sample_rate=None):
    """Oracle time-frequency masking of the reference-channel mixture.

    Parameters
    ----------
    bundle : MixtureBundle
    config : StftConfig, optional
        Defaults to 32/16 ms at 8 kHz and 16/8 ms at 16 kHz (256/128 samples).
    kind : {"irm", "ibm", "complex_mapping"}
        ``irm`` weights each source by ``|S_c| / (sum_k |S_k| + |N| + eps)``;
        ``ibm`` keeps each unit for its strongest source only;
        ``complex_mapping`` resynthesises the direct-path STFT itself.
    sample_rate : int, optional
        Rate the config was designed for; must match the bundle when given.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    if config is None:
        config = StftConfig(256, 128)
    if not isinstance(config, StftConfig):
        raise TypeError("config must be a StftConfig")
    if sample_rate is not None and sample_rate != bundle.sample_rate:
        raise ValueError(
            f"STFT config is for {sample_rate} Hz but the bundle is {bundle.sample_rate} Hz"
        )
    q = bundle.reference_index
    specs = [stft(_ref(s, q), config) for s in bundle.direct]
    if kind == "complex_mapping":
        ests = tuple(istft(sp) for sp in specs)
        return SeparationOutput(ests, "ideal_mask(complex_mapping)")
    ymix = stft(_ref(bundle.mixture, q), config)
    mags = np.stack([np.abs(sp.values) for sp in specs])
    if kind == "irm":
        noise_mag = np.abs(stft(_ref(bundle.noise, q), config).values)
        masks = mags / (mags.sum(axis=0) + noise_mag + MASK_EPS)
    else:
        winner = np.argmax(mags, axis=0)
        masks = (np.arange(len(specs))[:, None, None, None] == winner[None]).astype(np.float64)
    ests = tuple(istft(ymix.with_values(ymix.values * m)) for m in masks)
    return SeparationOutput(ests, f"ideal_mask({kind})")


def load_external(spec, directory, length=None, name="external"):
    """Read ``est1.wav .. estC.wav`` for the manifest entry ``spec`` from ``directory``.

    When ``length`` (the mixture length) is given, estimates are zero-padded
    or truncated to it with a logged warning.
    """
    return _load_external(spec, directory, length, name)


def _load_external(spec, directory, length, name):
    directory = Path(directory)
    ests = []
    for i in range(1, spec.n_speakers + 1):
        path = directory / f"est{i}.wav"
        if not path.exists():
            raise FileNotFoundError(f"missing external estimate {path}")
        audio = read_wav(path)
        if audio.n_channels != 1:
            raise ValueError(f"{path} has {audio.n_channels} channels; estimates must be mono")
        if audio.sample_rate != spec.sample_rate:
            raise ValueError(f"{path} is {audio.sample_rate} Hz; the entry is {spec.sample_rate} Hz")
        x = audio.channel(0)
        if length is not None and x.size != length:
            logger.warning(
                "%s: %d samples, mixture has %d; %s", path, x.size, length,
                "truncating" if x.size > length else "zero-padding",
            )
            x = x[:length] if x.size > length else np.pad(x, (0, length - x.size))
        ests.append(MultichannelAudio.mono(x, audio.sample_rate))
    return SeparationOutput(tuple(ests), f"external({name})")


class _Separator(BaseEstimator):
    """Stateless separators: ``fit`` only validates and returns self."""

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def separate(self, bundle):
        raise NotImplementedError

    def __call__(self, bundle):
        return self.separate(bundle)


class Passthrough(_Separator):
    tag = "passthrough"

    def separate(self, bundle):
        return passthrough(bundle)


class OracleDirectPath(_Separator):
    tag = "oracle_direct"

    def separate(self, bundle):
        return oracle_direct_path(bundle)


class IdealMask(_Separator):
    """Oracle masking; ``frame_size``/``hop_size`` in samples."""

    def __init__(self, kind="irm", frame_size=256, hop_size=128):
        self.kind = kind
        self.frame_size = frame_size
        self.hop_size = hop_size

    @property
    def tag(self):
        return f"ideal_mask_{self.kind}"

    def separate(self, bundle):
        return ideal_mask(bundle, StftConfig(self.frame_size, self.hop_size), self.kind)


class ExternalSeparator(_Separator):
    """Estimates from ``<root>/<entry_id>/est<i>.wav``."""

    def __init__(self, root, name="external"):
        self.root = root
        self.name = name

    @property
    def tag(self):
        return f"external_{self.name}"

    def separate(self, bundle):
        spec = bundle.spec
        return _load_external(spec, Path(self.root) / spec.entry_id, bundle.mixture.length, self.name)


def make_separator(name):
    """Separator from a CLI-style name.

    ``passthrough``, ``oracle_direct``, ``ideal_mask:<kind>`` and
    ``external:<dir>`` are accepted.
    """
    if name == "passthrough":
        return Passthrough()
    if name == "oracle_direct":
        return OracleDirectPath()
    if name.startswith("ideal_mask"):
        kind = name.partition(":")[2] or "irm"
        if kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
        return IdealMask(kind)
    if name.startswith("external:"):
        root = name.partition(":")[2]
        if not root:
            raise ValueError("external separator needs a directory: external:<dir>")
        return ExternalSeparator(root, Path(root).name or "external")
    raise ValueError(
        f"unknown separator {name!r}; expected passthrough, oracle_direct, "
        "ideal_mask:<irm|ibm|complex_mapping> or external:<dir>"
    )
