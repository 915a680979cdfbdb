"""Reverberant multichannel mixture synthesis and seeded dataset manifests.

A mixture is the sum of every speaker's reverberant image plus sensor
noise, and each image is the sum of its direct path and its reflections.
Components are snapped to a 2**-40 grid before summation, so both
identities hold bit-exactly in float64 rather than to rounding error.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .room import ArrayGeometry, RoomSpec, circular_array, identity_rirs, simulate_rir
from .signal import MultichannelAudio
from .sources import SourceRef, load_source
from .wavio import read_wav, write_wav

__all__ = [
    "MixtureSpec",
    "MixtureBundle",
    "ConditionGrid",
    "Manifest",
    "Recipe",
    "RECIPES",
    "SMS_WSJ_LARGE_TEST_GRID",
    "synthesize",
    "scale_noise_to_snr",
    "pad_and_offset",
    "sample_snr_normal",
    "build_manifest",
    "build_grid_manifest",
    "entry_seed",
    "render_entry",
    "write_bundle",
    "load_bundle",
]

logger = logging.getLogger(__name__)

_GRID = 2.0**-40
NOISE_KINDS = ("white", "file", "none")


def _snap(x):
    return np.round(np.asarray(x) / _GRID) * _GRID


def _bin_label(lo, hi):
    return f"{lo:g}-{hi:g}"


@dataclass(frozen=True)
class ConditionGrid:
    """Ordered, non-overlapping half-open T60 (s) and SNR (dB) bins."""

    t60_bins: tuple
    snr_bins: tuple

    def __post_init__(self):
        for name in ("t60_bins", "snr_bins"):
            bins = tuple((float(lo), float(hi)) for lo, hi in getattr(self, name))
            if not bins:
                raise ValueError(f"{name} is empty")
            for lo, hi in bins:
                if not lo < hi:
                    raise ValueError(f"{name}: empty bin [{lo}, {hi})")
            for (_, hi), (lo, _) in zip(bins, bins[1:]):
                if lo < hi:
                    raise ValueError(f"{name} must be ordered and non-overlapping")
            object.__setattr__(self, name, bins)

    @property
    def t60_labels(self):
        return [_bin_label(*b) for b in self.t60_bins]

    @property
    def snr_labels(self):
        return [_bin_label(*b) for b in self.snr_bins]

    def cells(self):
        """(t60_bin, snr_bin) pairs, T60 outer."""
        return [(t, s) for t in self.t60_bins for s in self.snr_bins]

    def to_dict(self):
        return {"t60_bins": [list(b) for b in self.t60_bins], "snr_bins": [list(b) for b in self.snr_bins]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(map(tuple, d["t60_bins"])), tuple(map(tuple, d["snr_bins"])))


SMS_WSJ_LARGE_TEST_GRID = ConditionGrid(
    t60_bins=((0.2, 0.5), (0.5, 0.8), (0.8, 1.1)),
    snr_bins=((0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0)),
)


@dataclass(frozen=True)
class MixtureSpec:
    """Everything needed to render one mixture deterministically.

    ``room=None`` mixes sources without any acoustic path (single-channel,
    Libri2Mix style). ``noise`` is ``{"kind": "white"}``,
    ``{"kind": "file", "path": ..., "offset": samples}`` or
    ``{"kind": "none"}`` (noise-free; ``snr_db`` is then ignored).
    """

    entry_id: str
    sources: tuple
    offsets: tuple
    sample_rate: int
    snr_db: float
    seed: int
    room: RoomSpec | None = None
    source_positions: tuple = ()
    mic_positions: tuple = ()
    reference_index: int = 0
    noise: dict = field(default_factory=lambda: {"kind": "white"})
    condition_tags: tuple | None = None

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ValueError("a mixture needs at least one source")
        if len(self.offsets) != len(self.sources):
            raise ValueError("one offset per source is required")
        if any(o < 0 for o in self.offsets):
            raise ValueError("offsets must be non-negative")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.room is not None and len(self.source_positions) != len(self.sources):
            raise ValueError("one position per source is required")
        if self.noise.get("kind") not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise.get('kind')!r}")

    @property
    def n_speakers(self):
        return len(self.sources)

    @property
    def n_channels(self):
        return len(self.mic_positions) if self.room is not None else 1

    def array(self):
        return ArrayGeometry(np.array(self.mic_positions), self.reference_index)

    def to_dict(self):
        room = None
        if self.room is not None:
            room = {
                "dimensions": list(self.room.dimensions),
                "target_t60": self.room.target_t60,
                "speed_of_sound": self.room.speed_of_sound,
            }
        return {
            "entry_id": self.entry_id,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "sources": [s.to_dict() for s in self.sources],
            "offsets": list(self.offsets),
            "snr_db": self.snr_db,
            "room": room,
            "source_positions": [list(p) for p in self.source_positions],
            "mic_positions": [list(p) for p in self.mic_positions],
            "reference_index": self.reference_index,
            "noise": dict(self.noise),
            "condition_tags": list(self.condition_tags) if self.condition_tags else None,
        }

    @classmethod
    def from_dict(cls, d):
        room = d.get("room")
        if room is not None:
            room = RoomSpec(tuple(room["dimensions"]), room["target_t60"], room["speed_of_sound"])
        tags = d.get("condition_tags")
        return cls(
            entry_id=d["entry_id"],
            sources=tuple(SourceRef.from_dict(s) for s in d["sources"]),
            offsets=tuple(int(o) for o in d["offsets"]),
            sample_rate=int(d["sample_rate"]),
            snr_db=float(d["snr_db"]),
            seed=int(d["seed"]),
            room=room,
            source_positions=tuple(tuple(p) for p in d.get("source_positions", ())),
            mic_positions=tuple(tuple(p) for p in d.get("mic_positions", ())),
            reference_index=int(d.get("reference_index", 0)),
            noise=dict(d.get("noise", {"kind": "white"})),
            condition_tags=tuple(tags) if tags else None,
        )


@dataclass(frozen=True, eq=False)
class MixtureBundle:
    """A rendered mixture and its exact additive decomposition.

    ``reverberant``, ``direct`` and ``reflections`` hold one
    ``MultichannelAudio`` per speaker. ``reverberant`` and ``reflections``
    are None for bundles reloaded from disk, which store only the mixture,
    direct paths and noise.
    """

    mixture: MultichannelAudio
    direct: tuple
    noise: MultichannelAudio
    spec: MixtureSpec
    reverberant: tuple | None = None
    reflections: tuple | None = None

    @property
    def reference_index(self):
        return self.spec.reference_index

    @property
    def sample_rate(self):
        return self.mixture.sample_rate


@dataclass(frozen=True)
class Manifest:
    """A recipe's list of mixture specs, reproducible from ``seed``."""

    recipe: str
    seed: int
    entries: tuple
    grid: ConditionGrid | None = None

    def to_json(self):
        doc = {
            "recipe": self.recipe,
            "seed": self.seed,
            "grid": self.grid.to_dict() if self.grid else None,
            "entries": [e.to_dict() for e in self.entries],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        grid = ConditionGrid.from_dict(doc["grid"]) if doc.get("grid") else None
        entries = tuple(MixtureSpec.from_dict(e) for e in doc["entries"])
        return cls(doc["recipe"], int(doc["seed"]), entries, grid)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def pad_and_offset(sources, offsets):
    """Delay each mono source by its offset and zero-pad all to a common length.

    Returns a ``(n_sources, length)`` array whose length is the largest
    ``len(source) + offset``.
    """
    sources = [np.asarray(s, dtype=np.float64).ravel() for s in sources]
    if len(sources) != len(offsets):
        raise ValueError("one offset per source is required")
    if any(o < 0 for o in offsets):
        raise ValueError("offsets must be non-negative")
    length = max(s.size + int(o) for s, o in zip(sources, offsets))
    out = np.zeros((len(sources), length))
    for i, (s, o) in enumerate(zip(sources, offsets)):
        out[i, int(o) : int(o) + s.size] = s
    return out


def scale_noise_to_snr(speech_mix, noise, snr_db, reference_index=0):
    """Scale ``noise`` so the reference-channel SNR against ``speech_mix`` is ``snr_db``.

    The gain is measured at the reference channel and applied to every
    noise channel.
    """
    speech = np.asarray(getattr(speech_mix, "samples", speech_mix), dtype=np.float64)
    noise_arr = np.asarray(getattr(noise, "samples", noise), dtype=np.float64)
    p_speech = np.mean(np.atleast_2d(speech)[reference_index] ** 2)
    p_noise = np.mean(np.atleast_2d(noise_arr)[reference_index] ** 2)
    if p_speech <= 0:
        raise ValueError("speech has zero power at the reference channel")
    if p_noise <= 0:
        raise ValueError("noise has zero power at the reference channel")
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = noise_arr * gain
    if isinstance(noise, MultichannelAudio):
        return MultichannelAudio(scaled, noise.sample_rate)
    return scaled


def sample_snr_normal(rng, mean_db=-2.0, std_db=3.6):
    """One SNR draw (dB) from a normal law; defaults follow Libri2Mix-style mixing."""
    if std_db < 0:
        raise ValueError("std_db must be non-negative")
    return float(rng.normal(mean_db, std_db))


def _convolve(src, rirs, length):
    out = np.empty((rirs.shape[0], length))
    for p in range(rirs.shape[0]):
        out[p] = fftconvolve(src, rirs[p])[:length]
    return out


def synthesize(spec, rirs, sources, noise):
    """Render ``spec`` from precomputed RIRs, mono sources and raw noise.

    Parameters
    ----------
    spec : MixtureSpec
    rirs : RirSet
        One response per (source, mic).
    sources : sequence of MultichannelAudio
        Mono source signals, in ``spec.sources`` order.
    noise : MultichannelAudio or None
        Unscaled noise, at least as long as the mixture, with one channel
        per microphone. Ignored (and may be None) for ``{"kind": "none"}``.

    Returns
    -------
    MixtureBundle
    """
    if rirs.n_sources != len(sources) or len(sources) != spec.n_speakers:
        raise ValueError(
            f"{len(sources)} sources, {rirs.n_sources} RIR sets and {spec.n_speakers} "
            "spec sources must agree"
        )
    sr = spec.sample_rate
    for s in sources:
        if s.sample_rate != sr:
            raise ValueError(f"source at {s.sample_rate} Hz, mixture at {sr} Hz")
        if s.n_channels != 1:
            raise ValueError("sources must be mono")
    silent = spec.noise["kind"] == "none"
    if rirs.sample_rate != sr or (not silent and noise.sample_rate != sr):
        raise ValueError("RIR, noise and mixture sample rates must match")
    aligned = pad_and_offset([s.channel(0) for s in sources], spec.offsets)
    length = aligned.shape[1]
    reverberant, direct, reflections = [], [], []
    for c in range(spec.n_speakers):
        x = _snap(_convolve(aligned[c], rirs.full_rirs[c], length))
        s = _snap(_convolve(aligned[c], rirs.direct_rirs[c], length))
        reverberant.append(x)
        direct.append(s)
        reflections.append(x - s)
    speech = reverberant[0].copy()
    for x in reverberant[1:]:
        speech = speech + x
    if silent:
        n = np.zeros_like(speech)
    else:
        if noise.length < length:
            raise ValueError(f"noise has {noise.length} samples, mixture needs {length}")
        raw = noise.samples[:, :length]
        if raw.shape[0] != rirs.n_mics:
            raise ValueError(f"noise has {raw.shape[0]} channels, mixture has {rirs.n_mics}")
        n = _snap(scale_noise_to_snr(speech, raw, spec.snr_db, spec.reference_index))
    mixture = speech + n
    wrap = lambda a: MultichannelAudio(a, sr)  # noqa: E731
    return MixtureBundle(
        mixture=wrap(mixture),
        direct=tuple(map(wrap, direct)),
        noise=wrap(n),
        spec=spec,
        reverberant=tuple(map(wrap, reverberant)),
        reflections=tuple(map(wrap, reflections)),
    )


def entry_seed(global_seed, index):
    """64-bit seed for manifest entry ``index``."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Recipe:
    """Sampling ranges for one dataset style.

    ``snr_range`` draws uniformly; ``snr_normal`` (mean, std) overrides it.
    ``offset_max_s`` > 0 delays exactly one randomly chosen speaker by a
    uniform draw in [0, offset_max_s] seconds.
    """

    name: str
    sample_rate: int
    t60_range: tuple | None
    snr_range: tuple = (20.0, 30.0)
    snr_normal: tuple | None = None
    n_speakers: int = 2
    array_radius: float = 0.10
    array_count: int = 6
    array_center_mic: bool = False
    single_channel: bool = False
    distance_range: tuple = (1.0, 2.0)
    room_x: tuple = (6.0, 9.0)
    room_y: tuple = (5.0, 7.0)
    room_z: tuple = (2.7, 3.3)
    wall_margin: float = 0.3
    offset_max_s: float = 0.0
    noise_path: str | None = None

    def with_options(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


RECIPES = {
    "sms_wsj": Recipe("sms_wsj", 8000, (0.2, 0.5), snr_range=(20.0, 30.0)),
    "sms_wsj_large": Recipe("sms_wsj_large", 8000, (0.2, 1.1), snr_range=(0.0, 40.0)),
    "sms_wsj_large_1ch": Recipe(
        "sms_wsj_large_1ch", 8000, (0.2, 1.1), snr_range=(0.0, 40.0), single_channel=True
    ),
    "libri2mix": Recipe(
        "libri2mix", 16000, None, snr_normal=(-2.0, 3.6), single_channel=True, offset_max_s=1.0
    ),
    "libricss": Recipe(
        "libricss", 16000, (0.2, 0.5), snr_range=(20.0, 30.0),
        array_radius=0.0425, array_center_mic=True,
    ),
}


def _place(rng, recipe, room_dims, array_offsets):
    """Array and source positions inside the room (rejection sampling)."""
    dims = np.asarray(room_dims)
    margin = recipe.wall_margin
    for _ in range(1000):
        centre = np.array([
            dims[0] / 2 + rng.uniform(-0.5, 0.5),
            dims[1] / 2 + rng.uniform(-0.5, 0.5),
            rng.uniform(1.0, 1.6),
        ])
        mics = centre + array_offsets
        if not all(np.all(m > margin) and np.all(m < dims - margin) for m in mics):
            continue
        positions = []
        for _ in range(recipe.n_speakers):
            for _ in range(1000):
                dist = rng.uniform(*recipe.distance_range)
                angle = rng.uniform(0.0, 2.0 * np.pi)
                z = rng.uniform(margin, dims[2] - margin)
                dz = z - centre[2]
                if abs(dz) >= dist:
                    continue
                r = math.sqrt(dist**2 - dz**2)
                p = centre + np.array([r * math.cos(angle), r * math.sin(angle), dz])
                if np.all(p > margin) and np.all(p < dims - margin):
                    positions.append(p)
                    break
            else:
                break
        if len(positions) == recipe.n_speakers:
            return mics, positions
    raise RuntimeError(f"could not place array and sources in a {tuple(dims)} m room")


def _array_offsets(recipe):
    geo = circular_array(recipe.array_radius, recipe.array_count, recipe.array_center_mic)
    offsets = geo.mic_positions
    ref = geo.reference_index
    if recipe.single_channel:
        return offsets[ref : ref + 1], 0
    return offsets, ref


def _r(x, nd=6):
    return float(round(float(x), nd))


def _draw_entry(recipe, pool, index, global_seed, t60=None, snr=None, tags=None, entry_prefix="e"):
    seed = entry_seed(global_seed, index)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=recipe.n_speakers, replace=False)
    sources = tuple(pool[int(i)] for i in picks)
    offsets = [0] * recipe.n_speakers
    if recipe.offset_max_s > 0 and recipe.n_speakers > 1:
        who = int(rng.integers(recipe.n_speakers))
        offsets[who] = int(rng.uniform(0.0, recipe.offset_max_s) * recipe.sample_rate)
    if snr is None:
        if recipe.snr_normal is not None:
            snr = sample_snr_normal(rng, *recipe.snr_normal)
        else:
            snr = rng.uniform(*recipe.snr_range)
    noise = {"kind": "white"}
    if recipe.noise_path is not None:
        noise = {"kind": "file", "path": recipe.noise_path, "offset": int(rng.integers(0, 2**31))}
    room = None
    src_pos, mic_pos, ref = (), (), 0
    if recipe.t60_range is not None:
        if t60 is None:
            t60 = rng.uniform(*recipe.t60_range)
        dims = (_r(rng.uniform(*recipe.room_x), 3), _r(rng.uniform(*recipe.room_y), 3),
                _r(rng.uniform(*recipe.room_z), 3))
        room = RoomSpec(dims, _r(t60))
        offsets_geo, ref = _array_offsets(recipe)
        mics, positions = _place(rng, recipe, dims, offsets_geo)
        src_pos = tuple(tuple(_r(v) for v in p) for p in positions)
        mic_pos = tuple(tuple(_r(v) for v in m) for m in mics)
    return MixtureSpec(
        entry_id=f"{entry_prefix}{index:05d}",
        sources=sources,
        offsets=tuple(offsets),
        sample_rate=recipe.sample_rate,
        snr_db=_r(snr),
        seed=seed,
        room=room,
        source_positions=src_pos,
        mic_positions=mic_pos,
        reference_index=ref,
        noise=noise,
        condition_tags=tags,
    )


def _check_pool(pool, recipe):
    if not pool:
        raise ValueError("source pool is empty")
    if len(pool) < recipe.n_speakers:
        raise ValueError(f"source pool has {len(pool)} utterances; need {recipe.n_speakers}")


def build_manifest(recipe, count, seed, pool):
    """``count`` entries with T60 and SNR drawn from the recipe's ranges."""
    _check_pool(pool, recipe)
    entries = tuple(_draw_entry(recipe, pool, i, seed) for i in range(count))
    return Manifest(recipe.name, int(seed), entries)


def build_grid_manifest(recipe, grid, per_cell, seed, pool):
    """``per_cell`` entries for every (T60, SNR) cell, drawn uniformly inside the cell.

    Entries are ordered cell by cell (T60 bins outer) and tagged with the
    cell's bin labels.
    """
    _check_pool(pool, recipe)
    if recipe.t60_range is None:
        raise ValueError(f"recipe {recipe.name!r} has no room model; a T60 grid needs one")
    entries = []
    index = 0
    for t60_bin in grid.t60_bins:
        for snr_bin in grid.snr_bins:
            tags = (_bin_label(*t60_bin), _bin_label(*snr_bin))
            for _ in range(per_cell):
                rng = np.random.default_rng([entry_seed(seed, index), 7])
                t60 = rng.uniform(*t60_bin)
                snr = rng.uniform(*snr_bin)
                entries.append(_draw_entry(recipe, pool, index, seed, t60, snr, tags))
                index += 1
    return Manifest(recipe.name + "_grid", int(seed), tuple(entries), grid)


def _noise_for(spec, n_channels, length):
    kind = spec.noise["kind"]
    if kind == "none":
        return None
    if kind == "white":
        rng = np.random.default_rng([spec.seed, 1])
        return MultichannelAudio(rng.standard_normal((n_channels, length)), spec.sample_rate)
    audio = read_wav(spec.noise["path"])
    if audio.sample_rate != spec.sample_rate:
        raise ValueError(f"noise file is {audio.sample_rate} Hz, mixture is {spec.sample_rate} Hz")
    data = audio.samples
    if data.shape[1] < length:
        raise ValueError(f"noise file has {data.shape[1]} samples; need {length}")
    start = spec.noise.get("offset", 0) % (data.shape[1] - length + 1)
    data = data[:, start : start + length]
    # replicate channels cyclically when the file has fewer than the array
    data = data[np.arange(n_channels) % data.shape[0]]
    return MultichannelAudio(data, spec.sample_rate)


def render_entry(spec):
    """Simulate RIRs, load sources and noise, and synthesize one manifest entry."""
    sources = [load_source(ref, spec.sample_rate) for ref in spec.sources]
    if spec.room is None:
        rirs = identity_rirs(spec.n_speakers, 1, spec.sample_rate)
    else:
        rirs = simulate_rir(
            spec.room, np.array(spec.source_positions), spec.array(), sample_rate=spec.sample_rate
        )
    length = max(s.length + o for s, o in zip(sources, spec.offsets))
    noise = _noise_for(spec, rirs.n_mics, length)
    return synthesize(spec, rirs, sources, noise)


def write_bundle(bundle, directory):
    """Write ``mixture.wav``, ``src<i>_direct.wav`` and ``noise.wav`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_wav(directory / "mixture.wav", bundle.mixture)
    for i, s in enumerate(bundle.direct, start=1):
        write_wav(directory / f"src{i}_direct.wav", s)
    write_wav(directory / "noise.wav", bundle.noise)
    return directory


def load_bundle(directory, spec):
    """Reload a bundle written by :func:`write_bundle` (no reverberant images)."""
    directory = Path(directory)
    mixture = read_wav(directory / "mixture.wav")
    direct = tuple(read_wav(directory / f"src{i}_direct.wav") for i in range(1, spec.n_speakers + 1))
    noise = read_wav(directory / "noise.wav")
    return MixtureBundle(mixture=mixture, direct=direct, noise=noise, spec=spec)
