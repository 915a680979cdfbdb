import logging

import numpy as np
import pytest

from mixbench.metrics import pit_evaluate, si_sdr
from mixbench.mixture import MixtureSpec, synthesize
from mixbench.room import identity_rirs
from mixbench.separators import (
    ExternalSeparator,
    IdealMask,
    OracleDirectPath,
    Passthrough,
    SeparationOutput,
    ideal_mask,
    load_external,
    make_separator,
    oracle_direct_path,
    passthrough,
)
from mixbench.signal import MultichannelAudio, StftConfig, stft
from mixbench.sources import SourceRef
from mixbench.wavio import write_wav


def _clean_single(rng, length=4000):
    spec = MixtureSpec("c", (SourceRef("s", synth_seed=1, duration=0.25),), (0,), 16000, 0.0, 1,
                       noise={"kind": "none"})
    x = MultichannelAudio.mono(rng.standard_normal(length), 16000)
    return synthesize(spec, identity_rirs(1, 1, 16000), [x], None)


class TestBaselines:
    def test_passthrough_copies_reference(self, reverberant_bundle):
        out = passthrough(reverberant_bundle)
        q = reverberant_bundle.reference_index
        assert out.n_sources == 2 and out.provenance == "unprocessed"
        for e in out.estimates:
            np.testing.assert_array_equal(e.channel(0), reverberant_bundle.mixture.channel(q))

    def test_passthrough_identity_case(self, rng):
        b = _clean_single(rng)
        assert si_sdr(passthrough(b).estimates[0], b.direct[0]) == 100.0

    def test_oracle_is_direct_path(self, reverberant_bundle):
        out = oracle_direct_path(reverberant_bundle)
        q = reverberant_bundle.reference_index
        for e, s in zip(out.estimates, reverberant_bundle.direct):
            np.testing.assert_array_equal(e.channel(0), s.channel(q))

    def test_oracle_pit_identity(self, reverberant_bundle):
        out = oracle_direct_path(reverberant_bundle)
        refs = [s.select(reverberant_bundle.reference_index) for s in reverberant_bundle.direct]
        assert pit_evaluate(list(out.estimates), refs).permutation == (0, 1)


class TestIdealMask:
    def test_single_source_irm_near_one(self, rng):
        b = _clean_single(rng)
        cfg = StftConfig(256, 128)
        s = stft(b.direct[0], cfg).values
        out = ideal_mask(b, cfg, "irm")
        y = stft(out.estimates[0], cfg).values
        active = np.abs(s) > 1e-3
        np.testing.assert_allclose(np.abs(y[active]) / np.abs(s[active]), 1.0, atol=1e-6)

    def test_ibm_partitions_units(self, reverberant_bundle):
        # binary masks partition the mixture, so estimates sum back to it
        out = ideal_mask(reverberant_bundle, kind="ibm")
        q = reverberant_bundle.reference_index
        total = out.as_array().sum(axis=0)
        np.testing.assert_allclose(total, reverberant_bundle.mixture.channel(q), atol=1e-10)

    def test_complex_mapping_recovers_direct(self, reverberant_bundle):
        out = ideal_mask(reverberant_bundle, kind="complex_mapping")
        q = reverberant_bundle.reference_index
        for e, s in zip(out.estimates, reverberant_bundle.direct):
            np.testing.assert_allclose(e.channel(0), s.channel(q), atol=1e-6)

    def test_ordering(self, reverberant_bundle):
        refs = [s.select(reverberant_bundle.reference_index) for s in reverberant_bundle.direct]

        def score(out):
            return pit_evaluate(list(out.estimates), refs).score

        oracle = score(oracle_direct_path(reverberant_bundle))
        irm = score(ideal_mask(reverberant_bundle))
        unprocessed = score(passthrough(reverberant_bundle))
        assert oracle >= irm >= unprocessed

    def test_unknown_kind(self, reverberant_bundle):
        with pytest.raises(ValueError, match="mask kind"):
            ideal_mask(reverberant_bundle, kind="wiener")

    def test_rate_mismatch(self, reverberant_bundle):
        with pytest.raises(ValueError, match="Hz"):
            ideal_mask(reverberant_bundle, StftConfig(256, 128), sample_rate=16000)


class TestExternal:
    def _write(self, directory, lengths, rate=8000, channels=1):
        for i, n in enumerate(lengths, start=1):
            write_wav(directory / f"est{i}.wav", MultichannelAudio(np.full((channels, n), 0.1), rate))

    def _spec(self):
        refs = tuple(SourceRef(f"s{i}", synth_seed=i, duration=1.0) for i in range(2))
        return MixtureSpec("e1", refs, (0, 0), 8000, 10.0, 1)

    def test_loads_and_aligns(self, tmp_path, caplog):
        self._write(tmp_path, [90, 110])
        with caplog.at_level(logging.WARNING, logger="mixbench.separators"):
            out = load_external(self._spec(), tmp_path, length=100)
        assert all(e.length == 100 for e in out.estimates)
        assert "zero-padding" in caplog.text and "truncating" in caplog.text

    def test_missing_file(self, tmp_path):
        self._write(tmp_path, [100])
        with pytest.raises(FileNotFoundError, match="est2"):
            load_external(self._spec(), tmp_path)

    def test_multichannel_rejected(self, tmp_path):
        self._write(tmp_path, [100, 100], channels=2)
        with pytest.raises(ValueError, match="mono"):
            load_external(self._spec(), tmp_path)

    def test_rate_mismatch(self, tmp_path):
        self._write(tmp_path, [100, 100], rate=16000)
        with pytest.raises(ValueError, match="16000 Hz"):
            load_external(self._spec(), tmp_path)


class TestEstimators:
    def test_make_separator(self, tmp_path):
        assert isinstance(make_separator("passthrough"), Passthrough)
        assert isinstance(make_separator("oracle_direct"), OracleDirectPath)
        assert make_separator("ideal_mask:ibm").kind == "ibm"
        assert isinstance(make_separator(f"external:{tmp_path}"), ExternalSeparator)
        with pytest.raises(ValueError, match="unknown separator"):
            make_separator("tasnet")

    def test_params(self):
        sep = IdealMask(kind="ibm", frame_size=512, hop_size=256)
        assert sep.get_params() == {"kind": "ibm", "frame_size": 512, "hop_size": 256}
        assert sep.fit() is sep

    def test_output_validation(self):
        a = MultichannelAudio(np.ones(10), 8000)
        b = MultichannelAudio(np.ones(11), 8000)
        with pytest.raises(ValueError, match="length"):
            SeparationOutput((a, b), "x")
