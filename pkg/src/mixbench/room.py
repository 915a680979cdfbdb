"""Shoebox image-source room impulse responses and reverberation-time measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from ._validation import check_point, check_sample_rate

__all__ = [
    "RoomSpec",
    "ArrayGeometry",
    "RirSet",
    "circular_array",
    "absorption_from_t60",
    "reflection_coefficient",
    "default_max_order",
    "image_method_absorption",
    "dc_blocker",
    "simulate_rir",
    "measure_t60",
    "schroeder_curve",
    "identity_rirs",
    "write_rir_wav",
    "read_rir_wav",
    "RoomTooSmallError",
    "InsufficientDecayError",
]

SABINE_CONSTANT = 0.161
FD_HALF = 40  # 81-tap fractional-delay kernel
FD_STEPS = 256  # fractional-delay quantization, 1/256 sample


class RoomTooSmallError(ValueError):
    """Sabine's formula asks for more than total absorption."""


class InsufficientDecayError(ValueError):
    """The energy decay curve does not span the fit range."""


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with a target reverberation time.

    ``target_t60=None`` (or ``anechoic=True``) gives a free-field room in
    which only the direct path is rendered.
    """

    dimensions: tuple
    target_t60: float | None = None
    speed_of_sound: float = 343.0
    anechoic: bool = False

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        object.__setattr__(self, "dimensions", dims)
        if self.target_t60 is None:
            object.__setattr__(self, "anechoic", True)
        elif not self.anechoic and not self.target_t60 > 0:
            raise ValueError(f"target_t60 must be positive, got {self.target_t60}")
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")

    @property
    def volume(self):
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface_area(self):
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, point, margin=0.0):
        p = np.asarray(point, dtype=np.float64)
        dims = np.asarray(self.dimensions)
        return bool(np.all(p > margin) and np.all(p < dims - margin))


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Microphone positions (``n_mics x 3``, meters) and the reference mic index."""

    mic_positions: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"mic_positions must be (n_mics, 3), got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic_positions contain non-finite values")
        if not 0 <= self.reference_index < pos.shape[0]:
            raise ValueError(
                f"reference_index {self.reference_index} out of range for {pos.shape[0]} mics"
            )
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self):
        return self.mic_positions.shape[0]

    def translated(self, offset):
        return ArrayGeometry(self.mic_positions + np.asarray(offset), self.reference_index)

    def check_inside(self, room):
        for i, p in enumerate(self.mic_positions):
            if not room.contains(p):
                raise ValueError(f"microphone {i} at {tuple(p)} is not strictly inside the room")


@dataclass(frozen=True, eq=False)
class RirSet:
    """Impulse responses of shape ``(n_sources, n_mics, length)``.

    ``direct_rirs`` holds only the order-0 image of each pair.
    """

    full_rirs: np.ndarray
    direct_rirs: np.ndarray
    sample_rate: int
    absorption: float | None = None

    def __post_init__(self):
        full = np.asarray(self.full_rirs, dtype=np.float64)
        direct = np.asarray(self.direct_rirs, dtype=np.float64)
        if full.ndim != 3 or full.shape != direct.shape:
            raise ValueError(
                f"full and direct RIRs must share a (sources, mics, length) shape, "
                f"got {full.shape} and {direct.shape}"
            )
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(direct))):
            raise ValueError("RIRs contain non-finite values")
        object.__setattr__(self, "full_rirs", full)
        object.__setattr__(self, "direct_rirs", direct)
        object.__setattr__(self, "sample_rate", check_sample_rate(self.sample_rate))

    @property
    def n_sources(self):
        return self.full_rirs.shape[0]

    @property
    def n_mics(self):
        return self.full_rirs.shape[1]

    @property
    def length(self):
        return self.full_rirs.shape[2]


def circular_array(radius, count, include_center=False, center=(0.0, 0.0, 0.0)):
    """Evenly spaced horizontal circular array.

    Mic ``k`` sits at angle ``2*pi*k/count``. With ``include_center`` a
    center mic is appended and becomes the reference; otherwise the first
    mic on the circle is the reference.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    c = check_point(center, "center")
    angles = 2.0 * np.pi * np.arange(count) / count
    ring = np.stack([np.cos(angles), np.sin(angles), np.zeros(count)], axis=1) * radius
    pos = c + ring
    ref = 0
    if include_center:
        pos = np.vstack([pos, c])
        ref = count
    return ArrayGeometry(pos, ref)


def absorption_from_t60(room):
    """Uniform wall absorption from Sabine's formula, ``0.161 V / (S T60)``.

    Raises
    ------
    RoomTooSmallError
        If the requested T60 needs an absorption coefficient above 1.
    """
    if room.anechoic:
        return 1.0
    alpha = SABINE_CONSTANT * room.volume / (room.surface_area * room.target_t60)
    if alpha > 1.0:
        raise RoomTooSmallError(
            f"T60 {room.target_t60} s in a {room.dimensions} m room needs absorption "
            f"{alpha:.3f} > 1; the shortest reachable T60 is "
            f"{SABINE_CONSTANT * room.volume / room.surface_area:.3f} s"
        )
    return alpha


def reflection_coefficient(alpha):
    return math.sqrt(1.0 - alpha)


def default_max_order(room, coverage=1.5):
    """Reflection order whose image lattice spans ``coverage * T60`` of travel.

    An image at distance ``d`` in direction ``u`` has about
    ``d * sum(|u_i| / L_i)`` reflections, which is at most
    ``d * sqrt(sum(1 / L_i**2))``.
    """
    if room.anechoic:
        return 0
    reach = room.speed_of_sound * coverage * room.target_t60
    inv = math.sqrt(sum(1.0 / d**2 for d in room.dimensions))
    return int(math.ceil(reach * inv)) + 1


@lru_cache(maxsize=4)
def _fractional_delay_table(half=FD_HALF, steps=FD_STEPS):
    """Row q: Hann-windowed sinc taps for a delay of ``q / steps`` samples, unit DC gain."""
    frac = np.arange(steps) / steps
    t = np.arange(-half, half + 1)[None, :] - frac[:, None]
    win = 0.5 + 0.5 * np.cos(np.pi * t / (half + 1))
    table = np.sinc(t) * win
    table /= table.sum(axis=1, keepdims=True)
    table.setflags(write=False)
    return table


def _axis_images(length, coord, max_order, reach, lo, hi):
    """1-D image coordinates and reflection counts within ``reach`` of [lo, hi]."""
    n_max = int(math.ceil((reach + hi) / (2.0 * length))) + 1
    n = np.arange(-n_max, n_max + 1)
    coords = np.concatenate([coord + 2.0 * n * length, -coord + 2.0 * n * length])
    counts = np.concatenate([2 * np.abs(n), np.abs(2 * n - 1)])
    keep = (counts <= max_order) & (coords >= lo - reach) & (coords <= hi + reach)
    order = np.lexsort((coords[keep], counts[keep]))
    return coords[keep][order], counts[keep][order]


def _render(delays, amps, length):
    """Sum fractionally delayed impulses into a length-``length`` response."""
    table = _fractional_delay_table()
    steps = table.shape[0]
    q_total = np.rint(delays * steps).astype(np.int64)
    whole, frac = np.divmod(q_total, steps)
    buf_len = length + FD_HALF
    keep = whole < buf_len
    acc = np.bincount(
        whole[keep] * steps + frac[keep], weights=amps[keep], minlength=buf_len * steps
    ).reshape(buf_len, steps)
    taps = acc @ table
    out = np.zeros(buf_len + 2 * FD_HALF)
    for j in range(taps.shape[1]):
        out[j : j + buf_len] += taps[:, j]
    return out[FD_HALF : FD_HALF + length]


def _images_for_mic(mic, max_order, reach, axes):
    """Distances and reflection counts of every image within ``reach`` of ``mic``."""
    (xc, xk), (yc, yk), (zc, zk) = axes
    yz_k = (yk[:, None] + zk[None, :]).ravel()
    sel = yz_k <= max_order
    yz_k = yz_k[sel]
    dyz2 = ((yc - mic[1])[:, None] ** 2 + (zc - mic[2])[None, :] ** 2).ravel()[sel]
    reach2 = reach * reach
    delays, counts = [], []
    for cx, kx in zip(xc, xk):
        dx2 = (cx - mic[0]) ** 2
        if dx2 > reach2:
            continue
        mask = (yz_k <= max_order - kx) & (dyz2 <= reach2 - dx2)
        d = np.sqrt(dx2 + dyz2[mask])
        delays.append(d)
        counts.append(yz_k[mask] + kx)
    return np.concatenate(delays), np.concatenate(counts)


def _fit_t60(edc_db, t, fit_range):
    hi, lo = fit_range
    idx = np.flatnonzero((edc_db <= hi) & (edc_db >= lo))
    if idx.size < 2:
        return None
    slope, _ = np.polyfit(t[idx], edc_db[idx], 1)
    return -60.0 / slope if slope < 0 else None


@lru_cache(maxsize=256)
def _calibrated_beta(dimensions, target_t60, speed_of_sound, coverage, fit_range, bin_s=1e-3):
    dims = np.asarray(dimensions)
    room = RoomSpec(dimensions, target_t60, speed_of_sound)
    max_order = default_max_order(room, coverage)
    reach = speed_of_sound * coverage * target_t60
    src = dims * np.array([0.37, 0.41, 0.47])
    mic = dims * np.array([0.58, 0.56, 0.52])
    axes = [_axis_images(dims[a], src[a], max_order, reach, mic[a], mic[a]) for a in range(3)]
    d, k = _images_for_mic(mic, max_order, reach, axes)
    n_bins = int(math.ceil(reach / speed_of_sound / bin_s)) + 1
    tb = np.minimum((d / speed_of_sound / bin_s).astype(np.int64), n_bins - 1)
    hist = np.bincount(
        tb * (max_order + 1) + k, weights=1.0 / d**2, minlength=n_bins * (max_order + 1)
    ).reshape(n_bins, max_order + 1)
    t = (np.arange(n_bins) + 0.5) * bin_s
    orders = 2 * np.arange(max_order + 1)

    def excess(beta):
        energy = hist @ beta**orders
        edc = np.cumsum(energy[::-1])[::-1]
        with np.errstate(divide="ignore"):
            edc_db = 10.0 * np.log10(edc / edc[0])
        if edc_db[np.isfinite(edc_db)].min() > fit_range[1]:
            return 1e6  # too reverberant to decay inside the window
        t60 = _fit_t60(edc_db, t, fit_range)
        return (0.0 if t60 is None else t60) - target_t60

    return brentq(excess, 1e-6, 1.0 - 1e-9, xtol=1e-12)


def image_method_absorption(room, coverage=1.5, fit_range=(-5.0, -25.0)):
    """Uniform absorption whose image-source decay reaches ``room.target_t60``.

    With uniform specular walls the image-source energy decay is not
    exponential: images near the long room axis reflect rarely, so Sabine's
    absorption gives responses that ring 30-60 % longer than requested. This
    solves for the reflection coefficient at which the incoherent energy
    decay of the image lattice (representative source/receiver positions,
    1 ms bins) has the target T60 under the same Schroeder fit used by
    :func:`measure_t60`.
    """
    if room.anechoic:
        return 1.0
    beta = _calibrated_beta(
        room.dimensions, float(room.target_t60), float(room.speed_of_sound),
        float(coverage), tuple(fit_range),
    )
    return 1.0 - beta * beta


def dc_blocker(h, sample_rate, cutoff=100.0):
    """Allen-Berkley style second-order high-pass used to remove the image-method DC build-up."""
    w = 2.0 * np.pi * cutoff / sample_rate
    r1 = math.exp(-w)
    b1 = 2.0 * r1 * math.cos(w)
    b2 = -r1 * r1
    a1 = -(1.0 + r1)
    return lfilter([1.0, a1, r1], [1.0, -b1, -b2], h, axis=-1)


def simulate_rir(
    room,
    source,
    array,
    max_order=None,
    length=None,
    sample_rate=16000,
    absorption="calibrated",
    highpass=None,
):
    """Image-source impulse responses from one or more sources to every mic.

    Each image contributes ``beta**reflections / (4 pi d)`` at a delay of
    ``d / c`` seconds, rendered with an 81-tap Hann-windowed sinc whose
    fractional offset is quantized to 1/256 sample. All walls share one
    reflection coefficient ``beta = sqrt(1 - alpha)``.

    Parameters
    ----------
    room : RoomSpec
    source : array_like
        One ``(x, y, z)`` point or an ``(n_sources, 3)`` array.
    array : ArrayGeometry
    max_order : int, optional
        Maximum total reflection count; defaults to :func:`default_max_order`.
    length : int, optional
        RIR length in samples; defaults to 1.5 * T60 plus the longest
        direct-path delay (0.1 s when anechoic).
    sample_rate : int
    absorption : {"calibrated", "sabine"}
        ``"sabine"`` uses :func:`absorption_from_t60` directly;
        ``"calibrated"`` uses :func:`image_method_absorption`.
    highpass : bool, optional
        Apply :func:`dc_blocker` to full and direct responses alike.
        Defaults to True whenever reflections are rendered.

    Returns
    -------
    RirSet
    """
    sample_rate = check_sample_rate(sample_rate)
    sources = np.atleast_2d(np.asarray(source, dtype=np.float64))
    for i, s in enumerate(sources):
        check_point(s, f"source {i}")
        if not room.contains(s):
            raise ValueError(f"source {i} at {tuple(s)} is not strictly inside the room")
    array.check_inside(room)
    if absorption not in ("calibrated", "sabine"):
        raise ValueError(f"absorption must be 'calibrated' or 'sabine', got {absorption!r}")
    if max_order is None:
        max_order = default_max_order(room)
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    if room.anechoic:
        max_order = 0
    if highpass is None:
        highpass = max_order > 0
    c = room.speed_of_sound
    mics = array.mic_positions
    longest = max(np.linalg.norm(mics - s, axis=1).max() for s in sources) / c * sample_rate
    if length is None:
        span = 0.1 if room.anechoic else 1.5 * room.target_t60
        length = int(math.ceil(span * sample_rate + longest)) + FD_HALF
    if length <= longest:
        raise ValueError(
            f"length {length} samples is shorter than the direct-path delay "
            f"({longest:.1f} samples)"
        )

    if room.anechoic:
        alpha = 1.0
    elif absorption == "sabine":
        alpha = absorption_from_t60(room)
    else:
        alpha = image_method_absorption(room)
    beta = reflection_coefficient(alpha)
    beta_pow = beta ** np.arange(max_order + 1)
    reach = c * (length + FD_HALF) / sample_rate
    full = np.zeros((len(sources), array.n_mics, length))
    direct = np.zeros_like(full)
    for si, s in enumerate(sources):
        axes = [
            _axis_images(room.dimensions[a], s[a], max_order, reach, mics[:, a].min(), mics[:, a].max())
            for a in range(3)
        ]
        for mi, m in enumerate(mics):
            d, k = _images_for_mic(m, max_order, reach, axes)
            full[si, mi] = _render(d / c * sample_rate, beta_pow[k] / (4.0 * np.pi * d), length)
            d0 = np.linalg.norm(m - s)
            direct[si, mi] = _render(
                np.array([d0 / c * sample_rate]), np.array([1.0 / (4.0 * np.pi * d0)]), length
            )
    if highpass:
        full = dc_blocker(full, sample_rate)
        direct = dc_blocker(direct, sample_rate)
    return RirSet(full, direct, sample_rate, alpha)


def identity_rirs(n_sources, n_mics, sample_rate, length=1):
    """Unit-impulse RIRs: sources reach every mic unfiltered, with no reflections."""
    h = np.zeros((n_sources, n_mics, length))
    h[:, :, 0] = 1.0
    return RirSet(h, h.copy(), sample_rate)


def schroeder_curve(rir):
    """Backward-integrated energy decay curve in dB re. total energy."""
    h = np.asarray(rir, dtype=np.float64)
    energy = np.cumsum((h * h)[::-1])[::-1]
    if energy[0] <= 0:
        raise InsufficientDecayError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def measure_t60(rir, sample_rate, fit_range=(-5.0, -25.0)):
    """Reverberation time from a least-squares fit to the Schroeder decay.

    The line is fitted over the ``fit_range`` span of the decay curve
    (-5 dB to -25 dB by default, a T20 measurement) and extrapolated to a
    60 dB decay.

    Raises
    ------
    InsufficientDecayError
        If the finite part of the decay curve does not reach the lower fit
        limit, or fewer than two samples fall inside the span.
    """
    edc = schroeder_curve(rir)
    hi, lo = fit_range
    finite = np.isfinite(edc)
    if edc[finite].min() > lo:
        raise InsufficientDecayError(
            f"decay curve only reaches {edc[finite].min():.1f} dB; need {lo} dB"
        )
    t60 = _fit_t60(np.where(finite, edc, 0.0), np.arange(edc.size) / sample_rate, fit_range)
    if t60 is None:
        raise InsufficientDecayError(
            f"fewer than two samples between {hi} and {lo} dB; decay span too short"
        )
    return t60


def write_rir_wav(path, rirs, sample_rate):
    """Write a ``(n_mics, length)`` RIR block as a float32 multichannel WAV."""
    from .signal import MultichannelAudio
    from .wavio import write_wav

    return write_wav(path, MultichannelAudio(np.atleast_2d(rirs), sample_rate), "float32")


def read_rir_wav(path):
    """Read a RIR block written by :func:`write_rir_wav`; returns ``(rirs, sample_rate)``."""
    from .wavio import read_wav

    audio = read_wav(Path(path), supported_rates=None)
    return np.array(audio.samples), audio.sample_rate
