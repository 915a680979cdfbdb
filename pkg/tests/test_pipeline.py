import json

import pytest

from mixbench.pipeline import (
    ConfigError,
    RunConfig,
    grid_report_stage,
    load_or_build_manifest,
    reference_transcripts,
    run_pipeline,
    score_signals_stage,
    score_transcripts_stage,
    separate_stage,
    separator_tag,
    simulate_stage,
)
from mixbench.transcripts import Transcript, Utterance, write_transcripts


@pytest.fixture(scope="module")
def manifest():
    return load_or_build_manifest(None, "libri2mix", seed=4, count=4, pool_size=8)


def _hyps(manifest, tmp_path):
    refs = reference_transcripts(manifest)
    good, bad = [], []
    for t in refs.values():
        good.append(t)
        bad.append(Transcript(t.session_id, tuple(
            Utterance(u.speaker, u.start, u.end, u.tokens[1:] or ("junk",)) for u in t.utterances)))
    return {"base": write_transcripts(tmp_path / "bad.tsv", bad),
            "cand": write_transcripts(tmp_path / "good.tsv", good)}


class TestManifest:
    def test_requires_count(self):
        with pytest.raises(ConfigError, match="--count"):
            load_or_build_manifest(None, "libri2mix")

    def test_unknown_recipe(self):
        with pytest.raises(ConfigError, match="unknown recipe"):
            load_or_build_manifest(None, "wham", count=1)

    def test_missing_and_corrupt_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_or_build_manifest(tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ConfigError, match="does not parse"):
            load_or_build_manifest(bad)

    def test_reference_transcripts(self, manifest):
        refs = reference_transcripts(manifest)
        assert set(refs) == {s.entry_id for s in manifest.entries}
        assert all(t.speakers() == ["spk1", "spk2"] for t in refs.values())


class TestStages:
    def test_stage_chain(self, manifest, tmp_path):
        out = tmp_path / "out"
        assert simulate_stage(manifest, out).done == 4
        assert (out / "audio" / manifest.entries[0].entry_id / "mixture.wav").exists()
        assert simulate_stage(manifest, out, resume=True).skipped == 4

        assert separate_stage(manifest, out, "oracle_direct").done == 4
        result, records = score_signals_stage(manifest, out, "oracle_direct")
        assert not result.failures and len(records) == 8
        assert all(r["si_sdr"] == 100.0 for r in records)

        hyps = _hyps(manifest, tmp_path)
        wer = score_transcripts_stage(manifest, out, hyps, collar=0.25)
        assert all(b.errors == 0 for b in wer["cand"].values())
        assert all(b.errors > 0 for b in wer["base"].values())
        assert (out / "transcripts" / "segments_collar.tsv").read_text().count("\n") == 8

        report = grid_report_stage(manifest, out, "oracle_direct", ["base", "cand"])
        cell = report.cell("all", "all")
        assert cell["count"] == 4 and cell["wer"]["cand"] == 0.0
        assert cell["improvement"]["base->cand"] == pytest.approx(100.0)
        assert (out / "report" / "oracle_direct" / "grid_report.csv").exists()

    def test_external_estimates(self, manifest, tmp_path):
        out = tmp_path / "out"
        simulate_stage(manifest, out)
        separate_stage(manifest, out, "passthrough")
        ext = out / "separated" / "passthrough"
        _, records = score_signals_stage(manifest, out, f"external:{ext}", metrics=("si_sdr",))
        assert len(records) == 8 and all(r["sdr"] is None for r in records)

    def test_missing_estimates(self, manifest, tmp_path):
        with pytest.raises(ConfigError, match="no estimates"):
            score_signals_stage(manifest, tmp_path, "oracle_direct")

    def test_external_cannot_be_separated(self, manifest, tmp_path):
        with pytest.raises(ConfigError):
            separate_stage(manifest, tmp_path, f"external:{tmp_path}")

    def test_unknown_metric(self, manifest, tmp_path):
        (tmp_path / "separated" / "oracle_direct").mkdir(parents=True)
        with pytest.raises(ConfigError, match="metric"):
            score_signals_stage(manifest, tmp_path, "oracle_direct", metrics=("pesq",))

    def test_grid_report_needs_scores(self, manifest, tmp_path):
        with pytest.raises(ConfigError, match="no signal scores"):
            grid_report_stage(manifest, tmp_path, "oracle_direct")
        with pytest.raises(ConfigError, match="no transcript scores"):
            grid_report_stage(manifest, tmp_path, None, ["x"])


def _config(out, **kw):
    base = dict(out=out, recipe="libri2mix", seed=4, count=4, pool_size=8,
                separators=("oracle_direct", "passthrough"))
    base.update(kw)
    return RunConfig(**base)


class TestRunPipeline:
    def test_end_to_end(self, manifest, tmp_path):
        hyps = _hyps(manifest, tmp_path)
        result = run_pipeline(_config(tmp_path / "run", hyps=hyps))
        assert result.exit_code == 0 and not result.failures
        assert result.reports["oracle_direct"].cell("all", "all")["metrics"]["si_sdr"] == 100.0
        assert (tmp_path / "run" / "report" / "heatmap.svg").exists()
        assert (tmp_path / "run" / "scores" / "passthrough.jsonl").exists()

    def test_parallel_matches_serial(self, tmp_path):
        run_pipeline(_config(tmp_path / "a", jobs=1))
        run_pipeline(_config(tmp_path / "b", jobs=2))
        for rel in ("manifest.json", "scores/oracle_direct.jsonl", "scores/passthrough.jsonl",
                    "report/passthrough/grid_report.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_resume_reuses_records(self, tmp_path):
        out = tmp_path / "r"
        first = run_pipeline(_config(out))
        assert run_pipeline(_config(out, resume=True)).records == first.records
        # a tampered record is read back rather than recomputed
        path = out / "records" / "passthrough" / f"{first.manifest.entries[0].entry_id}.json"
        recs = json.loads(path.read_text())
        recs[0]["sdr"] = -42.0
        path.write_text(json.dumps(recs))
        again = run_pipeline(_config(out, resume=True))
        assert again.records["passthrough"][0]["sdr"] == -42.0

    def test_failures_exceed_limit(self, tmp_path):
        m = load_or_build_manifest(None, "libri2mix", seed=4, count=4, pool_size=8)
        data = json.loads(m.to_json())
        data["entries"][0]["sources"][0]["path"] = str(tmp_path / "missing.wav")
        data["entries"][0]["sources"][0]["synth_seed"] = None
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(data))
        result = run_pipeline(_config(tmp_path / "f", manifest=path, recipe=None))
        assert result.exit_code == 2
        assert list(result.failures) == [m.entries[0].entry_id]
        assert (tmp_path / "f" / "failures.jsonl").exists()
        assert result.reports["oracle_direct"].total_count == 3

    @pytest.mark.parametrize(
        "kw, match",
        [(dict(recipe=None), "recipe"), (dict(metrics=()), "metric"), (dict(jobs=0), "jobs"),
         (dict(separators=("tasnet",)), "unknown separator"), (dict(collar=-1.0), "collar"),
         (dict(hyps={"x": "/nonexistent"}), "hypothesis")],
    )
    def test_config_errors(self, tmp_path, kw, match):
        with pytest.raises(ConfigError, match=match):
            _config(tmp_path, **kw).validate()


def test_separator_tag():
    assert separator_tag("ideal_mask:irm") == "ideal_mask_irm"
