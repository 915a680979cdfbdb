"""Stage functions and the end-to-end run behind the command-line interface.

Every stage reads and writes plain files under an output root::

    manifest.json
    audio/<entry_id>/{mixture,src<i>_direct,noise}.wav
    audio/reference.tsv
    separated/<separator>/<entry_id>/est<i>.wav
    scores/<separator>.jsonl
    transcripts/<label>.jsonl
    report/<separator>/grid_report.{json,csv}
    report/heatmap.svg

so an external separator or recognizer can replace any stage.
"""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import METRICS, SignalScores, pit_evaluate
from .mixture import (
    RECIPES,
    SMS_WSJ_LARGE_TEST_GRID,
    Manifest,
    build_grid_manifest,
    build_manifest,
    load_bundle,
    render_entry,
    write_bundle,
)
from .report import GridReport, emit_heatmap
from .separators import load_external, make_separator
from .sources import directory_pool, synthetic_pool
from .transcripts import Transcript, WerBreakdown, apply_collar, cpwer, read_transcripts, write_transcripts
from .wavio import write_wav

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunResult",
    "FAILURE_LIMIT",
    "load_or_build_manifest",
    "reference_transcripts",
    "score_bundle",
    "simulate_stage",
    "separate_stage",
    "score_signals_stage",
    "score_transcripts_stage",
    "grid_report_stage",
    "run_pipeline",
]

logger = logging.getLogger(__name__)

FAILURE_LIMIT = 0.10


class ConfigError(ValueError):
    """Invalid paths, names or option combinations."""


def _dumps(obj):
    return json.dumps(obj, sort_keys=True)


def _safe_tag(name):
    return name.replace(":", "_").replace("/", "_").strip("_") or "separator"


def separator_tag(name):
    """Directory-safe tag for a separator name."""
    if name.startswith("external:"):
        return "external_" + (Path(name.partition(":")[2]).name or "dir")
    return _safe_tag(name)


def _run_map(fn, items, jobs):
    """``[fn(x) for x in items]`` in input order, optionally across processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


def _guard(fn, *args):
    try:
        return "ok", fn(*args)
    except Exception as exc:  # per-entry failures are counted, not fatal
        return "error", f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


@dataclass
class StageResult:
    done: int = 0
    skipped: int = 0
    failures: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.done + self.skipped + len(self.failures)

    def exceeded(self, limit=FAILURE_LIMIT):
        return self.total > 0 and len(self.failures) / self.total > limit


def _collect(result, entry_ids, outcomes):
    values = {}
    for eid, (status, value) in zip(entry_ids, outcomes):
        if status == "ok":
            values[eid] = value
            result.done += 1
        elif status == "skip":
            result.skipped += 1
        else:
            result.failures[eid] = value
            logger.error("entry %s failed: %s", eid, value.splitlines()[0])
    return values


def load_or_build_manifest(path=None, recipe=None, seed=0, count=None, per_cell=None,
                           pool_size=200, sources_dir=None):
    """Read a manifest file, or build one from a named recipe.

    With ``per_cell`` the 12-cell T60/SNR test grid is built; otherwise
    ``count`` entries are drawn from the recipe's ranges.
    """
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"manifest {path} does not exist")
        try:
            return Manifest.load(path)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"manifest {path} does not parse: {exc}") from exc
    if recipe not in RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; expected one of {sorted(RECIPES)}")
    rec = RECIPES[recipe]
    if sources_dir is not None:
        if not Path(sources_dir).is_dir():
            raise ConfigError(f"sources directory {sources_dir} does not exist")
        pool = directory_pool(sources_dir)
    else:
        pool = synthetic_pool(pool_size, seed)
    if per_cell is not None:
        return build_grid_manifest(rec, SMS_WSJ_LARGE_TEST_GRID, per_cell, seed, pool)
    if count is None:
        raise ConfigError("either a manifest, --count or --per-cell is required")
    return build_manifest(rec, count, seed, pool)


def reference_transcripts(manifest):
    """Per-entry reference Transcripts: speaker ``spk<i>`` spans its source's active time."""
    out = {}
    for spec in manifest.entries:
        utts = []
        for i, (src, off) in enumerate(zip(spec.sources, spec.offsets), start=1):
            start = off / spec.sample_rate
            end = start + (src.duration or 0.0)
            if end <= start:
                continue
            utts.append((f"spk{i}", start, end, src.transcript))
        out[spec.entry_id] = Transcript.from_rows(spec.entry_id, utts)
    return out


def score_bundle(output, bundle, metrics, separator):
    """Per-speaker JSONL records for one separation output.

    The pairing is chosen by PIT on SI-SDR when it is among ``metrics``,
    else on the first metric.
    """
    q = bundle.reference_index
    refs = [s.select(q) for s in bundle.direct]
    sr = bundle.sample_rate
    key = "si_sdr" if "si_sdr" in metrics else metrics[0]
    pit = pit_evaluate(list(output.estimates), refs, key, sample_rate=sr)
    records = []
    for est_i, ref_i in enumerate(pit.permutation):
        vals = {name: METRICS[name][0](output.estimates[est_i], refs[ref_i], sr) for name in metrics}
        scores = SignalScores(**vals)
        records.append({
            "entry_id": bundle.spec.entry_id,
            "separator": separator,
            "speaker": ref_i + 1,
            "estimate": est_i + 1,
            "permutation": [p + 1 for p in pit.permutation],
            **scores.to_dict(),
        })
    records.sort(key=lambda r: r["speaker"])
    return records


def _audio_dir(out, entry_id):
    return Path(out) / "audio" / entry_id


def _bundle_complete(directory, spec):
    names = ["mixture.wav", "noise.wav"] + [f"src{i}_direct.wav" for i in range(1, spec.n_speakers + 1)]
    return all((directory / n).exists() for n in names)


def _simulate_one(args):
    spec, out, resume = args
    directory = _audio_dir(out, spec.entry_id)
    if resume and _bundle_complete(directory, spec):
        return "skip", None

    def work():
        write_bundle(render_entry(spec), directory)

    return _guard(work)


def simulate_stage(manifest, out, jobs=1, resume=False):
    """Render every entry and write its WAV files and the reference transcripts."""
    out = Path(out)
    result = StageResult()
    outcomes = _run_map(_simulate_one, [(s, out, resume) for s in manifest.entries], jobs)
    _collect(result, [s.entry_id for s in manifest.entries], outcomes)
    write_transcripts(out / "audio" / "reference.tsv", reference_transcripts(manifest))
    return result


def _separate_one(args):
    spec, out, name, tag, resume = args
    target = Path(out) / "separated" / tag / spec.entry_id
    if resume and all((target / f"est{i}.wav").exists() for i in range(1, spec.n_speakers + 1)):
        return "skip", None

    def work():
        bundle = load_bundle(_audio_dir(out, spec.entry_id), spec)
        output = make_separator(name).separate(bundle)
        for i, e in enumerate(output.estimates, start=1):
            write_wav(target / f"est{i}.wav", e)

    return _guard(work)


def separate_stage(manifest, out, separator, jobs=1, resume=False):
    """Run a built-in separator on simulated audio, writing ``est<i>.wav`` files."""
    if separator.startswith("external:"):
        raise ConfigError("external estimates are read directly by score-signals; nothing to separate")
    make_separator(separator)
    tag = separator_tag(separator)
    result = StageResult()
    items = [(s, Path(out), separator, tag, resume) for s in manifest.entries]
    _collect(result, [s.entry_id for s in manifest.entries], _run_map(_separate_one, items, jobs))
    return result


def _score_one(args):
    spec, out, root, tag, metrics = args

    def work():
        bundle = load_bundle(_audio_dir(out, spec.entry_id), spec)
        output = load_external(spec, Path(root) / spec.entry_id, bundle.mixture.length, tag)
        return score_bundle(output, bundle, metrics, tag)

    return _guard(work)


def _check_metrics(metrics):
    metrics = tuple(metrics)
    unknown = [m for m in metrics if m not in METRICS]
    if unknown or not metrics:
        raise ConfigError(f"unknown or empty metric list {list(metrics)}; choose from {sorted(METRICS)}")
    return metrics


def _write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_dumps(r) + "\n")
    return path


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def score_signals_stage(manifest, out, separator, metrics=("si_sdr", "sdr", "estoi"), jobs=1):
    """Score separated (or external) estimates against the direct-path references."""
    metrics = _check_metrics(metrics)
    out = Path(out)
    tag = separator_tag(separator)
    if separator.startswith("external:"):
        root = Path(separator.partition(":")[2])
    else:
        root = out / "separated" / tag
    if not root.is_dir():
        raise ConfigError(f"no estimates found at {root}")
    result = StageResult()
    items = [(s, out, root, tag, metrics) for s in manifest.entries]
    values = _collect(result, [s.entry_id for s in manifest.entries], _run_map(_score_one, items, jobs))
    records = [r for s in manifest.entries for r in values.get(s.entry_id, [])]
    _write_jsonl(out / "scores" / f"{tag}.jsonl", records)
    return result, records


def _parse_hyp_source(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.tsv"))
        if not files:
            raise ConfigError(f"hypothesis directory {path} has no .tsv files")
    elif path.exists():
        files = [path]
    else:
        raise ConfigError(f"hypothesis path {path} does not exist")
    merged = {}
    for f in files:
        for sid, t in read_transcripts(f).items():
            if sid in merged:
                t = Transcript(sid, merged[sid].utterances + t.utterances)
            merged[sid] = t
    return merged


def score_transcripts_stage(manifest, out, hyps, collar=None):
    """cpWER of each labeled hypothesis set against the manifest's reference transcripts.

    Entries with no hypothesis count every reference word as deleted. With
    ``collar`` the relaxed reference boundaries are written to
    ``transcripts/segments_collar.tsv``.
    """
    if not hyps:
        raise ConfigError("at least one --hyp label=path is required")
    out = Path(out)
    refs = reference_transcripts(manifest)
    wer_by_label = {}
    for label, path in hyps.items():
        hyp = _parse_hyp_source(path)
        per_entry, records = {}, []
        for spec in manifest.entries:
            ref = refs[spec.entry_id]
            res = cpwer(ref, hyp.get(spec.entry_id, Transcript(spec.entry_id)))
            per_entry[spec.entry_id] = res.breakdown
            records.append({"entry_id": spec.entry_id, "label": label, **res.to_dict()})
        _write_jsonl(out / "transcripts" / f"{_safe_tag(label)}.jsonl", records)
        wer_by_label[label] = per_entry
    if collar is not None:
        lines = []
        for spec in manifest.entries:
            ref = refs[spec.entry_id]
            if not ref.utterances:
                continue
            length = max(u.end for u in ref.utterances)
            bounds = [(u.speaker, u.start, u.end) for u in ref.utterances]
            for spk, lo, hi in apply_collar(bounds, collar, length):
                lines.append(f"{spec.entry_id}\t{spk}\t{lo:.3f}\t{hi:.3f}\n")
        target = out / "transcripts" / "segments_collar.tsv"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("".join(lines), encoding="utf-8")
    return wer_by_label


def _load_wer(out, labels):
    wer_by_label = {}
    for label in labels:
        path = Path(out) / "transcripts" / f"{_safe_tag(label)}.jsonl"
        if not path.exists():
            raise ConfigError(f"no transcript scores for label {label!r} at {path}")
        per = {}
        for r in _read_jsonl(path):
            b = r["breakdown"]
            per[r["entry_id"]] = WerBreakdown(
                b["substitutions"], b["insertions"], b["deletions"], b["reference_words"]
            )
        wer_by_label[label] = per
    return wer_by_label


def grid_report_stage(manifest, out, separator=None, labels=()):
    """Aggregate score and transcript files into ``report/<separator>/grid_report.*``."""
    out = Path(out)
    records = []
    tag = separator_tag(separator) if separator else "transcripts"
    if separator:
        path = out / "scores" / f"{tag}.jsonl"
        if not path.exists():
            raise ConfigError(f"no signal scores for {separator!r} at {path}")
        records = _read_jsonl(path)
    wer_by_label = _load_wer(out, labels) if labels else None
    report = GridReport.build(manifest.entries, manifest.grid, records, wer_by_label)
    report.save(out / "report" / tag)
    return report


@dataclass
class RunConfig:
    """Options of an end-to-end run.

    Either ``manifest`` or ``recipe`` (with ``count`` or ``per_cell``)
    selects the entries. ``hyps`` maps labels such as ``"reverb-noisy AM"``
    to hypothesis TSV files or directories.
    """

    out: Path
    manifest: Path | None = None
    recipe: str | None = None
    seed: int = 0
    count: int | None = None
    per_cell: int | None = None
    pool_size: int = 200
    sources_dir: Path | None = None
    separators: tuple = ("oracle_direct",)
    metrics: tuple = ("si_sdr", "sdr", "estoi")
    hyps: dict = field(default_factory=dict)
    collar: float | None = None
    jobs: int = 1
    resume: bool = False
    write_audio: bool = False

    def validate(self):
        self.out = Path(self.out)
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ConfigError(f"manifest {self.manifest} does not exist")
        if self.manifest is None and self.recipe is None:
            raise ConfigError("a manifest path or a recipe is required")
        if not self.metrics and not self.hyps:
            raise ConfigError("select at least one metric or hypothesis set")
        if self.metrics:
            self.metrics = _check_metrics(self.metrics)
        for name in self.separators:
            try:
                make_separator(name)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if name.startswith("external:") and not Path(name.partition(":")[2]).is_dir():
                raise ConfigError(f"external estimate directory {name.partition(':')[2]} does not exist")
        for label, path in self.hyps.items():
            if not Path(path).exists():
                raise ConfigError(f"hypothesis path {path} for {label!r} does not exist")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.collar is not None and self.collar < 0:
            raise ConfigError("collar must be non-negative")
        return self


@dataclass
class RunResult:
    manifest: Manifest
    reports: dict
    records: dict
    failures: dict
    exit_code: int


def _entry_records(args):
    spec, out, separators, metrics, resume, write_audio = args
    paths = {name: Path(out) / "records" / separator_tag(name) / f"{spec.entry_id}.json" for name in separators}
    if resume and all(p.exists() for p in paths.values()):
        return "ok", {name: json.loads(p.read_text(encoding="utf-8")) for name, p in paths.items()}

    def work():
        bundle = render_entry(spec)
        if write_audio:
            write_bundle(bundle, _audio_dir(out, spec.entry_id))
        result = {}
        for name in separators:
            output = make_separator(name).separate(bundle)
            recs = score_bundle(output, bundle, metrics, separator_tag(name))
            paths[name].parent.mkdir(parents=True, exist_ok=True)
            paths[name].write_text(_dumps(recs) + "\n", encoding="utf-8")
            result[name] = recs
        return result

    return _guard(work)


def run_pipeline(config):
    """Manifest, synthesis, separation, scoring and grid reports in one pass.

    Entries are processed independently (``config.jobs`` processes) and
    merged in manifest order, so outputs do not depend on parallelism.
    Failed entries are logged and skipped; more than 10% failures sets
    ``exit_code`` to 2.
    """
    config.validate()
    out = config.out
    manifest = load_or_build_manifest(
        config.manifest, config.recipe, config.seed, config.count, config.per_cell,
        config.pool_size, config.sources_dir,
    )
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    stage = StageResult()
    records = {name: [] for name in config.separators}
    if config.metrics and config.separators:
        items = [
            (s, out, tuple(config.separators), tuple(config.metrics), config.resume, config.write_audio)
            for s in manifest.entries
        ]
        values = _collect(stage, [s.entry_id for s in manifest.entries], _run_map(_entry_records, items, config.jobs))
        for s in manifest.entries:
            for name in config.separators:
                records[name].extend(values.get(s.entry_id, {}).get(name, []))
        for name, recs in records.items():
            _write_jsonl(out / "scores" / f"{separator_tag(name)}.jsonl", recs)
    wer_by_label = None
    if config.hyps:
        wer_by_label = score_transcripts_stage(manifest, out, config.hyps, config.collar)
    reports = {}
    failed = set(stage.failures)
    kept = [s for s in manifest.entries if s.entry_id not in failed]
    names = list(config.separators) if config.metrics else []
    for name in names or [None]:
        recs = records.get(name, []) if name else []
        report = GridReport.build(kept, manifest.grid, recs, wer_by_label)
        tag = separator_tag(name) if name else "transcripts"
        report.save(out / "report" / tag)
        reports[name or "transcripts"] = report
    if wer_by_label and len(wer_by_label) >= 2:
        base, cand = list(wer_by_label)[:2]
        emit_heatmap(next(iter(reports.values())), (base, cand), out / "report" / "heatmap.svg")
    if stage.failures:
        _write_jsonl(out / "failures.jsonl", [{"entry_id": k, "error": v} for k, v in sorted(stage.failures.items())])
    code = 2 if stage.exceeded() else 0
    return RunResult(manifest, reports, records, dict(stage.failures), code)

