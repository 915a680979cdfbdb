"""Benchmark harness for multi-talker reverberant speech separation.

Simulates shoebox-room mixtures with exact component decompositions, runs
reference separators, and scores them with signal metrics, WER and cpWER
over a T60 x SNR condition grid.
"""

from .metrics import composite_loss, estoi, pit_evaluate, ri_mag_loss, sdr, si_sdr
from .mixture import (
    RECIPES,
    SMS_WSJ_LARGE_TEST_GRID,
    ConditionGrid,
    Manifest,
    MixtureBundle,
    MixtureSpec,
    build_grid_manifest,
    build_manifest,
    render_entry,
    synthesize,
)
from .report import GridReport, emit_heatmap, relative_improvement
from .room import ArrayGeometry, RirSet, RoomSpec, circular_array, measure_t60, simulate_rir
from .separators import ideal_mask, oracle_direct_path, passthrough
from .signal import ComplexSpectrogram, MultichannelAudio, StftConfig, StftTransformer, istft, stft
from .sources import synthetic_pool
from .transcripts import Transcript, apply_collar, cpwer, normalize_text, wer

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry",
    "ComplexSpectrogram",
    "ConditionGrid",
    "GridReport",
    "Manifest",
    "MixtureBundle",
    "MixtureSpec",
    "MultichannelAudio",
    "RECIPES",
    "RirSet",
    "RoomSpec",
    "SMS_WSJ_LARGE_TEST_GRID",
    "StftConfig",
    "StftTransformer",
    "Transcript",
    "apply_collar",
    "build_grid_manifest",
    "build_manifest",
    "circular_array",
    "composite_loss",
    "cpwer",
    "emit_heatmap",
    "estoi",
    "ideal_mask",
    "istft",
    "measure_t60",
    "normalize_text",
    "oracle_direct_path",
    "passthrough",
    "pit_evaluate",
    "relative_improvement",
    "render_entry",
    "ri_mag_loss",
    "sdr",
    "si_sdr",
    "simulate_rir",
    "stft",
    "synthesize",
    "synthetic_pool",
    "wer",
]
