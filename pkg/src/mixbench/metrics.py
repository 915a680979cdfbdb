"""Separation metrics, the RI-Mag + SI-SDR composite loss, and PIT.

Energy ratios are clamped to +/-100 dB so that perfect (or hopeless)
estimates keep aggregates finite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._validation import check_pair
from .estoi import estoi
from .signal import ComplexSpectrogram, MultichannelAudio, StftConfig, stft

__all__ = [
    "CLAMP_DB",
    "si_sdr",
    "sdr",
    "estoi",
    "ri_mag_loss",
    "composite_loss",
    "LossBreakdown",
    "SignalScores",
    "PitResult",
    "pit_evaluate",
    "pit_from_matrix",
    "brute_force_assignment",
    "METRICS",
]

CLAMP_DB = 100.0


def _ratio_db(num, den):
    if den <= 0.0:
        return CLAMP_DB if num > 0.0 else -CLAMP_DB
    if num <= 0.0:
        return -CLAMP_DB
    value = 10.0 * math.log10(num / den)
    return float(min(CLAMP_DB, max(-CLAMP_DB, value)))


def _as_1d(x):
    if isinstance(x, MultichannelAudio):
        if x.n_channels != 1:
            raise ValueError("expected a mono signal")
        return x.channel(0)
    return x


def si_sdr(estimate, reference, variant="projected"):
    """Scale-invariant SDR in dB.

    ``alpha = <s, s_hat> / <s, s>``; the default numerator is
    ``||alpha s||**2``. ``variant="as_written"`` uses ``||s||**2`` instead,
    which is not invariant to the estimate's scale.
    """
    est, ref = check_pair(_as_1d(estimate), _as_1d(reference))
    if not np.any(est):
        raise ValueError("estimate has zero energy")
    ref_energy = float(ref @ ref)
    alpha = float(ref @ est) / ref_energy
    target = alpha * ref
    err = est - target
    if variant == "projected":
        num = float(target @ target)
    elif variant == "as_written":
        num = ref_energy
    else:
        raise ValueError(f"unknown SI-SDR variant {variant!r}")
    return _ratio_db(num, float(err @ err))


def sdr(estimate, reference):
    """Plain energy-ratio SDR ``10 log10(||s||**2 / ||s_hat - s||**2)`` (no projection)."""
    est, ref = check_pair(_as_1d(estimate), _as_1d(reference), allow_silent_estimate=True)
    err = est - ref
    return _ratio_db(float(ref @ ref), float(err @ err))


MAGNITUDE_TERMS = ("complex_difference", "magnitude_difference")


def ri_mag_loss(estimate_spec, reference_spec, magnitude="complex_difference"):
    """L1 distance over real parts, imaginary parts and magnitudes.

    ``magnitude="complex_difference"`` uses ``| S - S_hat |``;
    ``"magnitude_difference"`` uses ``| |S| - |S_hat| |``.
    """
    est = getattr(estimate_spec, "values", estimate_spec)
    ref = getattr(reference_spec, "values", reference_spec)
    est = np.asarray(est, dtype=np.complex128)
    ref = np.asarray(ref, dtype=np.complex128)
    if est.shape != ref.shape:
        raise ValueError(f"spectrogram shapes differ: {est.shape} vs {ref.shape}")
    diff = ref - est
    if magnitude == "complex_difference":
        mag = np.abs(diff).sum()
    elif magnitude == "magnitude_difference":
        mag = np.abs(np.abs(ref) - np.abs(est)).sum()
    else:
        raise ValueError(f"unknown magnitude term {magnitude!r}; expected one of {MAGNITUDE_TERMS}")
    return float(np.abs(diff.real).sum() + np.abs(diff.imag).sum() + mag)


@dataclass(frozen=True)
class LossBreakdown:
    ri_mag: float
    si_sdr_loss: float
    total: float


def _spec(x, config, sample_rate):
    if isinstance(x, ComplexSpectrogram):
        return x
    return stft(MultichannelAudio.mono(_as_1d(x), sample_rate), config)


def composite_loss(
    estimates,
    references,
    config=None,
    sample_rate=16000,
    magnitude="complex_difference",
    si_sdr_variant="projected",
):
    """RI-Mag loss summed over sources plus the negated SI-SDR sum.

    Parameters
    ----------
    estimates, references : sequence of 1-D arrays or mono MultichannelAudio
        Paired by position.
    config : StftConfig, optional
        Defaults to 256/128 samples.
    """
    if len(estimates) != len(references):
        raise ValueError(f"{len(estimates)} estimates for {len(references)} references")
    config = config or StftConfig(256, 128)
    ri = 0.0
    neg = 0.0
    for e, r in zip(estimates, references):
        ri += ri_mag_loss(_spec(e, config, sample_rate), _spec(r, config, sample_rate), magnitude)
        neg -= si_sdr(e, r, si_sdr_variant)
    return LossBreakdown(ri_mag=ri, si_sdr_loss=neg, total=ri + neg)


@dataclass(frozen=True)
class SignalScores:
    si_sdr: float | None = None
    sdr: float | None = None
    estoi: float | None = None

    def to_dict(self):
        return {"si_sdr": self.si_sdr, "sdr": self.sdr, "estoi": self.estoi}


def _metric_estoi(estimate, reference, sample_rate):
    return estoi(_as_1d(estimate), _as_1d(reference), sample_rate)


# name -> (callable(est, ref, sample_rate), higher_is_better)
METRICS = {
    "si_sdr": (lambda e, r, sr: si_sdr(e, r), True),
    "sdr": (lambda e, r, sr: sdr(e, r), True),
    "estoi": (_metric_estoi, True),
}


@dataclass(frozen=True)
class PitResult:
    """Best pairing: ``permutation[i]`` is the reference matched to estimate ``i``.

    ``score`` is the mean of the matched pair values (or the objective's own
    value for non-decomposable objectives).
    """

    permutation: tuple
    score: float
    maximize: bool
    pair_scores: tuple = ()


def brute_force_assignment(matrix, maximize=True):
    """Exhaustive search over all permutations; the oracle for :func:`pit_from_matrix`."""
    m = np.asarray(matrix, dtype=np.float64)
    c = m.shape[0]
    best, best_perm = None, None
    for perm in itertools.permutations(range(c)):
        total = m[np.arange(c), perm].sum()
        if best is None or (total > best if maximize else total < best):
            best, best_perm = total, perm
    return tuple(int(p) for p in best_perm), float(best)


def pit_from_matrix(matrix, maximize=True):
    """Optimal assignment on a square ``(estimates, references)`` pair-score matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"pair-score matrix must be square, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("pair-score matrix contains non-finite values")
    rows, cols = linear_sum_assignment(m, maximize=maximize)
    perm = np.empty(m.shape[0], dtype=int)
    perm[rows] = cols
    pairs = m[np.arange(m.shape[0]), perm]
    return PitResult(tuple(int(p) for p in perm), float(pairs.mean()), maximize, tuple(pairs.tolist()))


def pit_evaluate(estimates, references, objective="si_sdr", sample_rate=16000, maximize=None):
    """Utterance-level permutation-invariant evaluation.

    Parameters
    ----------
    estimates, references : sequence of signals, same count C
        Joint objectives are limited to C <= 8.
    objective : str or callable
        A name in :data:`METRICS` or a pair function ``f(est, ref)``; both
        decompose over pairs and are solved by optimal assignment. A
        callable taking whole lists, wrapped as ``("joint", f)``, is searched
        by brute force over all C! orderings.
    maximize : bool, optional
        Required for callables; metric names know their direction.
    """
    c = len(estimates)
    if c != len(references):
        raise ValueError(f"{c} estimates for {len(references)} references")
    if c < 1:
        raise ValueError("PIT needs at least one source")
    if isinstance(objective, tuple) and objective[0] == "joint":
        if c > 8:
            raise ValueError(f"brute-force PIT supports at most 8 sources, got {c}")
        if maximize is None:
            raise ValueError("maximize must be given for a joint objective")
        fn = objective[1]
        best, best_perm = None, None
        for perm in itertools.permutations(range(c)):
            val = float(fn(list(estimates), [references[p] for p in perm]))
            if best is None or (val > best if maximize else val < best):
                best, best_perm = val, perm
        check = float(fn(list(estimates), [references[p] for p in best_perm]))
        if check != best:
            raise RuntimeError("joint objective is not deterministic")
        return PitResult(tuple(best_perm), best, maximize)
    if isinstance(objective, str):
        if objective not in METRICS:
            raise ValueError(f"unknown metric {objective!r}; expected one of {sorted(METRICS)}")
        fn, direction = METRICS[objective]
        pair = lambda e, r: fn(e, r, sample_rate)  # noqa: E731
        maximize = direction if maximize is None else maximize
    else:
        if maximize is None:
            raise ValueError("maximize must be given for a callable objective")
        pair = objective
    matrix = np.array([[pair(e, r) for r in references] for e in estimates], dtype=np.float64)
    result = pit_from_matrix(matrix, maximize)
    # re-evaluate under the chosen permutation
    again = np.array([pair(estimates[i], references[p]) for i, p in enumerate(result.permutation)])
    if not np.array_equal(again, np.array(result.pair_scores)):
        raise RuntimeError("objective changed between evaluations")
    return result

