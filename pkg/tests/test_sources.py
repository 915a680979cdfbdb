import numpy as np
import pytest

from mixbench.signal import MultichannelAudio
from mixbench.sources import (
    TARGET_RMS,
    SourceRef,
    directory_pool,
    load_source,
    synthetic_pool,
    synthetic_utterance,
)
from mixbench.wavio import write_wav


class TestSynthetic:
    def test_deterministic(self):
        a, ta = synthetic_utterance(5, 2.0, 8000)
        b, tb = synthetic_utterance(5, 2.0, 8000)
        np.testing.assert_array_equal(a, b)
        assert ta == tb

    def test_rms_and_length(self):
        x, _ = synthetic_utterance(9, 1.5, 16000)
        assert x.size == 24000
        assert np.sqrt(np.mean(x**2)) == pytest.approx(TARGET_RMS)

    def test_transcript_independent_of_rate(self):
        assert synthetic_utterance(3, 3.0, 8000)[1] == synthetic_utterance(3, 3.0, 16000)[1]

    def test_pool_ids_and_durations(self):
        pool = synthetic_pool(5, seed=1, duration_range=(2.0, 3.0))
        assert [p.id for p in pool] == [f"synth-{i:05d}" for i in range(5)]
        assert all(2.0 <= p.duration <= 3.0 and p.transcript for p in pool)

    def test_pool_reproducible(self):
        assert synthetic_pool(4, seed=2) == synthetic_pool(4, seed=2)
        assert synthetic_pool(4, seed=2) != synthetic_pool(4, seed=3)


class TestSourceRef:
    def test_exactly_one_origin(self):
        with pytest.raises(ValueError, match="exactly one"):
            SourceRef("x")
        with pytest.raises(ValueError, match="exactly one"):
            SourceRef("x", path="a.wav", synth_seed=1)

    def test_dict_round_trip(self):
        ref = SourceRef("x", synth_seed=3, duration=1.0, transcript="a b")
        assert SourceRef.from_dict(ref.to_dict()) == ref


class TestDirectoryPool:
    def test_reads_wavs_and_transcripts(self, tmp_path):
        write_wav(tmp_path / "u1.wav", MultichannelAudio(np.full(800, 0.1), 8000))
        (tmp_path / "u1.txt").write_text("hello world\n")
        write_wav(tmp_path / "u2.wav", MultichannelAudio(np.full(400, 0.1), 8000))
        pool = directory_pool(tmp_path)
        assert [p.id for p in pool] == ["u1", "u2"]
        assert pool[0].transcript == "hello world" and pool[1].transcript == ""
        assert load_source(pool[0], 8000).length == 800

    def test_rate_mismatch(self, tmp_path):
        write_wav(tmp_path / "u1.wav", MultichannelAudio(np.full(800, 0.1), 8000))
        with pytest.raises(ValueError, match="8000 Hz"):
            load_source(directory_pool(tmp_path)[0], 16000)

    def test_multichannel_source_rejected(self, tmp_path):
        write_wav(tmp_path / "u1.wav", MultichannelAudio(np.full((2, 800), 0.1), 8000))
        with pytest.raises(ValueError, match="mono"):
            load_source(directory_pool(tmp_path)[0], 8000)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError, match="no .wav"):
            directory_pool(tmp_path)
