"""Per-condition grid reports, relative WER improvement and SVG heatmaps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .transcripts import WerBreakdown

__all__ = [
    "relative_improvement",
    "cell_of",
    "GridReport",
    "emit_heatmap",
    "HEATMAP_CLIP",
]

HEATMAP_CLIP = 25.0
ANECHOIC = "anechoic"
ALL = "all"


def relative_improvement(wer_baseline, wer_candidate):
    """Percent WER reduction of ``wer_candidate`` relative to ``wer_baseline``.

    Negative values mean the candidate is worse.
    """
    if not wer_baseline > 0:
        raise ValueError(f"baseline WER must be positive, got {wer_baseline}")
    return 100.0 * (wer_baseline - wer_candidate) / wer_baseline


def _label(lo, hi):
    return f"{lo:g}-{hi:g}"


def _find_bin(value, bins):
    for lo, hi in bins:
        if lo <= value < hi:
            return _label(lo, hi)
    # the top edge of the last bin is closed
    lo, hi = bins[-1]
    if value == hi:
        return _label(lo, hi)
    return None


def cell_of(spec, grid):
    """``(t60_label, snr_label)`` of a MixtureSpec.

    Condition tags win when present; otherwise the drawn T60 and SNR are
    binned. Without a grid every entry lands in a single ``(all, all)`` cell.
    """
    if spec.condition_tags:
        return tuple(spec.condition_tags)
    if grid is None:
        return (ALL, ALL)
    t60 = ANECHOIC if spec.room is None else _find_bin(spec.room.target_t60, grid.t60_bins)
    snr = _find_bin(spec.snr_db, grid.snr_bins)
    if t60 is None or snr is None:
        raise ValueError(f"entry {spec.entry_id} lies outside the condition grid")
    return (t60, snr)


def _pair_key(baseline, candidate):
    return f"{baseline}->{candidate}"


@dataclass(frozen=True)
class GridReport:
    """Per-cell aggregates.

    ``cells`` maps ``"t60|snr"`` to a dict with ``count``, ``metrics``
    (mean per metric), ``wer`` (pooled WER % per label), ``wer_counts`` and
    ``improvement`` (percent, keyed ``"baseline->candidate"``, None when the
    baseline WER is zero).
    """

    t60_labels: tuple
    snr_labels: tuple
    cells: dict
    labels: tuple = ()

    @classmethod
    def build(cls, specs, grid=None, signal_records=(), wer_by_label=None):
        """Aggregate per-utterance results into grid cells.

        Parameters
        ----------
        specs : sequence of MixtureSpec
            The manifest entries; each contributes to exactly one cell.
        grid : ConditionGrid, optional
        signal_records : iterable of dict
            Per-speaker JSONL records with ``entry_id`` and metric fields.
        wer_by_label : dict, optional
            ``label -> {entry_id: WerBreakdown}``.
        """
        wer_by_label = wer_by_label or {}
        labels = tuple(wer_by_label)
        cell_for = {s.entry_id: cell_of(s, grid) for s in specs}
        if grid is not None:
            t60_labels = tuple(grid.t60_labels)
            snr_labels = tuple(grid.snr_labels)
            if any(c[0] == ANECHOIC for c in cell_for.values()):
                t60_labels += (ANECHOIC,)
        else:
            t60_labels = tuple(dict.fromkeys(c[0] for c in cell_for.values()))
            snr_labels = tuple(dict.fromkeys(c[1] for c in cell_for.values()))
        keys = [(t, s) for t in t60_labels for s in snr_labels]
        counts = {k: 0 for k in keys}
        for c in cell_for.values():
            if c not in counts:
                raise ValueError(f"cell {c} is not part of the grid")
            counts[c] += 1
        values = {k: {} for k in keys}
        for rec in sorted(signal_records, key=lambda r: (r["entry_id"], r["speaker"])):
            cell = cell_for.get(rec["entry_id"])
            if cell is None:
                continue
            for name in ("si_sdr", "sdr", "estoi"):
                if rec.get(name) is not None:
                    values[cell].setdefault(name, []).append(rec[name])
        pooled = {k: {} for k in keys}
        for label, per_entry in wer_by_label.items():
            for entry_id in sorted(per_entry):
                cell = cell_for.get(entry_id)
                if cell is None:
                    continue
                pooled[cell][label] = pooled[cell].get(label, WerBreakdown()) + per_entry[entry_id]
        cells = {}
        for k in keys:
            wer_pct = {}
            for label in labels:
                b = pooled[k].get(label)
                if b is not None and b.reference_words > 0:
                    wer_pct[label] = 100.0 * b.errors / b.reference_words
            improvement = {}
            for base in labels:
                for cand in labels:
                    if base == cand or base not in wer_pct or cand not in wer_pct:
                        continue
                    improvement[_pair_key(base, cand)] = (
                        relative_improvement(wer_pct[base], wer_pct[cand]) if wer_pct[base] > 0 else None
                    )
            cells["|".join(k)] = {
                "count": counts[k],
                "metrics": {n: math.fsum(v) / len(v) for n, v in sorted(values[k].items())},
                "wer": wer_pct,
                "wer_counts": {lab: b.to_dict() for lab, b in sorted(pooled[k].items())},
                "improvement": improvement,
            }
        return cls(t60_labels, snr_labels, cells, labels)

    def cell(self, t60_label, snr_label):
        return self.cells[f"{t60_label}|{snr_label}"]

    @property
    def total_count(self):
        return sum(c["count"] for c in self.cells.values())

    def to_dict(self):
        return {
            "t60_labels": list(self.t60_labels),
            "snr_labels": list(self.snr_labels),
            "labels": list(self.labels),
            "cells": self.cells,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["t60_labels"]), tuple(d["snr_labels"]), d["cells"], tuple(d.get("labels", ())))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_csv(self):
        metric_names = sorted({n for c in self.cells.values() for n in c["metrics"]})
        pair_names = [_pair_key(a, b) for a in self.labels for b in self.labels if a != b]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["t60", "snr", "count"] + metric_names + [f"wer[{lab}]" for lab in self.labels]
            + [f"improvement[{p}]" for p in pair_names]
        )
        for t in self.t60_labels:
            for s in self.snr_labels:
                c = self.cell(t, s)
                row = [t, s, c["count"]]
                row += [_fmt(c["metrics"].get(n)) for n in metric_names]
                row += [_fmt(c["wer"].get(lab)) for lab in self.labels]
                row += [_fmt(c["improvement"].get(p)) for p in pair_names]
                w.writerow(row)
        return buf.getvalue()

    def save(self, directory, stem="grid_report"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        (directory / f"{stem}.csv").write_text(self.to_csv(), encoding="utf-8")
        return directory / f"{stem}.json"


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def _colour(value):
    if value is None:
        return "#d9d9d9"
    t = max(-1.0, min(1.0, value / HEATMAP_CLIP))
    target = (26, 152, 80) if t >= 0 else (215, 48, 39)
    a = abs(t)
    rgb = [round(255 + (c - 255) * a) for c in target]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def emit_heatmap(report, label_pair, path=None, title=None):
    """SVG heatmap of the improvement of ``label_pair[1]`` over ``label_pair[0]``.

    Rows are T60 bins, columns SNR bins. Positive cells are green and
    negative ones red, on a symmetric scale clipped at +/-25%. Returns
    the SVG text and writes it to ``path`` when given.
    """
    base, cand = label_pair
    for lab in (base, cand):
        if lab not in report.labels:
            raise ValueError(f"label {lab!r} not in report labels {list(report.labels)}")
    key = _pair_key(base, cand)
    cw, ch, left, top = 110, 56, 110, 70
    nr, nc = len(report.t60_labels), len(report.snr_labels)
    width, height = left + nc * cw + 20, top + nr * ch + 50
    title = title or f"Relative WER improvement (%) of {cand} over {base}"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<text x="{width / 2:g}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{left + nc * cw / 2:g}" y="{top - 28}" text-anchor="middle" font-size="12">SNR (dB)</text>',
        f'<text x="20" y="{top + nr * ch / 2:g}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 20 {top + nr * ch / 2:g})">T60 (s)</text>',
    ]
    for j, s in enumerate(report.snr_labels):
        out.append(
            f'<text x="{left + j * cw + cw / 2:g}" y="{top - 8}" text-anchor="middle" font-size="12">{escape(s)}</text>'
        )
    for i, t in enumerate(report.t60_labels):
        y = top + i * ch
        out.append(
            f'<text x="{left - 8}" y="{y + ch / 2 + 4:g}" text-anchor="end" font-size="12">{escape(t)}</text>'
        )
        for j, s in enumerate(report.snr_labels):
            value = report.cell(t, s)["improvement"].get(key)
            x = left + j * cw
            text = "n/a" if value is None else f"{value:.1f}"
            out.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{_colour(value)}" '
                f'stroke="#ffffff" data-t60="{escape(t)}" data-snr="{escape(s)}"/>'
            )
            out.append(
                f'<text x="{x + cw / 2:g}" y="{y + ch / 2 + 5:g}" text-anchor="middle" font-size="14">{text}</text>'
            )
    out.append("</svg>\n")
    svg = "\n".join(out)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
    return svg
