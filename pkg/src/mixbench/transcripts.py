"""Text normalization, WER, cpWER and oracle-boundary collars."""

from __future__ import annotations

import csv
import logging
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "NormalizationPolicy",
    "normalize_text",
    "WerBreakdown",
    "wer",
    "edit_distance_matrix",
    "Utterance",
    "Transcript",
    "CpWerResult",
    "cpwer",
    "apply_collar",
    "covered_duration",
    "read_transcripts",
    "write_transcripts",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizationPolicy:
    """Case folding and punctuation handling for :func:`normalize_text`.

    With ``keep_apostrophes`` an apostrophe between letters ("don't")
    survives punctuation stripping; elsewhere it is treated as punctuation.
    """

    casefold: bool = True
    strip_punctuation: bool = True
    keep_apostrophes: bool = True


DEFAULT_POLICY = NormalizationPolicy()


def normalize_text(raw, policy=DEFAULT_POLICY):
    """Tokens of ``raw`` after case folding and punctuation stripping."""
    text = raw.casefold() if policy.casefold else raw
    if policy.strip_punctuation:
        chars = []
        for i, ch in enumerate(text):
            if unicodedata.category(ch).startswith("P"):
                inner = 0 < i < len(text) - 1 and text[i - 1].isalnum() and text[i + 1].isalnum()
                if ch in "'’" and policy.keep_apostrophes and inner:
                    chars.append("'")
                else:
                    chars.append(" ")
            else:
                chars.append(ch)
        text = "".join(chars)
    return text.split()


@dataclass(frozen=True)
class WerBreakdown:
    """Edit counts of an alignment; ``wer`` is +inf for an empty reference with errors."""

    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    reference_words: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self):
        if self.reference_words == 0:
            return math.inf if self.errors else 0.0
        return self.errors / self.reference_words

    def __add__(self, other):
        return WerBreakdown(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.reference_words + other.reference_words,
        )

    def to_dict(self):
        w = self.wer
        return {
            "substitutions": self.substitutions,
            "insertions": self.insertions,
            "deletions": self.deletions,
            "reference_words": self.reference_words,
            "wer": None if math.isinf(w) else w,
        }


def _encode(ref, hyp):
    vocab = {}
    r = np.array([vocab.setdefault(t, len(vocab)) for t in ref], dtype=np.int64)
    h = np.array([vocab.setdefault(t, len(vocab)) for t in hyp], dtype=np.int64)
    return r, h


def edit_distance_matrix(ref, hyp):
    """Full ``(len(ref)+1, len(hyp)+1)`` Levenshtein table with unit costs.

    Rows are filled with numpy: the substitution/deletion candidates come
    from the previous row, and insertion chains are resolved with a running
    minimum of ``candidate[k] - k``.
    """
    r, h = _encode(ref, hyp)
    n, m = r.size, h.size
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    cols = np.arange(m + 1)
    for i in range(1, n + 1):
        prev = d[i - 1]
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (h != r[i - 1]))
        d[i] = np.minimum.accumulate(cand - cols) + cols
    return d


def wer(reference, hypothesis):
    """Minimal-edit alignment counts of ``hypothesis`` against ``reference``.

    On ties the backtrace takes the diagonal (hit or substitution) first,
    so a substitution is preferred over an insertion plus a deletion.
    """
    ref, hyp = list(reference), list(hypothesis)
    d = edit_distance_matrix(ref, hyp)
    i, j = len(ref), len(hyp)
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = int(ref[i - 1] != hyp[j - 1])
            if d[i, j] == d[i - 1, j - 1] + cost:
                s += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return WerBreakdown(s, ins, dels, len(ref))


@dataclass(frozen=True)
class Utterance:
    speaker: str
    start: float
    end: float
    tokens: tuple

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"utterance start {self.start} is not before end {self.end}")


@dataclass(frozen=True)
class Transcript:
    """Utterances of one session; utterances with no tokens are dropped."""

    session_id: str
    utterances: tuple = field(default_factory=tuple)

    def __post_init__(self):
        kept = []
        for u in self.utterances:
            if not u.tokens:
                logger.info("%s: dropping empty utterance of %s at %.3f s", self.session_id, u.speaker, u.start)
                continue
            kept.append(u)
        object.__setattr__(self, "utterances", tuple(kept))

    @classmethod
    def from_rows(cls, session_id, rows, policy=DEFAULT_POLICY):
        """From ``(speaker, start, end, text)`` tuples."""
        utts = tuple(
            Utterance(str(spk), float(start), float(end), tuple(normalize_text(text, policy)))
            for spk, start, end, text in rows
        )
        return cls(session_id, utts)

    def speakers(self):
        """Speaker ids in order of first appearance."""
        return list(dict.fromkeys(u.speaker for u in self.utterances))

    def concatenated(self):
        """Per speaker, tokens of all utterances in start-time order (ties by input order)."""
        out = {spk: [] for spk in self.speakers()}
        order = sorted(range(len(self.utterances)), key=lambda k: (self.utterances[k].start, k))
        for k in order:
            u = self.utterances[k]
            out[u.speaker].extend(u.tokens)
        return out


@dataclass(frozen=True)
class CpWerResult:
    """Best stream-to-speaker assignment and its pooled edit counts.

    ``assignment`` maps each hypothesis stream to a reference speaker, or to
    None when the stream is matched with a padded empty speaker.
    ``per_speaker`` lists ``(speaker, stream, WerBreakdown)`` for every
    matched pair, padded ones included, so the counts sum to ``breakdown``.
    """

    assignment: dict
    breakdown: WerBreakdown
    per_speaker: tuple

    @property
    def cpwer(self):
        return self.breakdown.wer

    def to_dict(self):
        return {
            "cpwer": self.breakdown.to_dict()["wer"],
            "assignment": dict(self.assignment),
            "breakdown": self.breakdown.to_dict(),
            "per_speaker": [
                {"speaker": s, "stream": h, **b.to_dict()} for s, h, b in self.per_speaker
            ],
        }


def _streams(hypothesis):
    if isinstance(hypothesis, Transcript):
        return hypothesis.concatenated()
    out = {}
    for stream_id, utterances in hypothesis:
        toks = out.setdefault(str(stream_id), [])
        for u in utterances:
            toks.extend(u)
    return out


def cpwer(reference, hypothesis):
    """Concatenated minimum-permutation WER.

    Parameters
    ----------
    reference : Transcript
    hypothesis : Transcript or sequence of ``(stream_id, [tokens, ...])``
        A Transcript's speaker column holds the stream ids.

    Unequal speaker and stream counts are padded with empty entities, so
    unmatched reference words are deletions and unmatched hypothesis words
    insertions.
    """
    refs = reference.concatenated()
    if not refs:
        raise ValueError("reference transcript has no speakers")
    hyps = _streams(hypothesis)
    spk_ids = list(refs) + [None] * max(0, len(hyps) - len(refs))
    hyp_ids = list(hyps) + [None] * max(0, len(refs) - len(hyps))
    n = len(spk_ids)
    pairs = {}
    cost = np.zeros((n, n))
    for a, spk in enumerate(spk_ids):
        r = refs.get(spk, []) if spk is not None else []
        for b, hid in enumerate(hyp_ids):
            h = hyps.get(hid, []) if hid is not None else []
            br = wer(r, h)
            pairs[a, b] = br
            cost[a, b] = br.errors
    rows, cols = linear_sum_assignment(cost)
    total = WerBreakdown()
    per, assignment = [], {}
    for a, b in zip(rows, cols):
        br = pairs[a, b]
        total = total + br
        per.append((spk_ids[a], hyp_ids[b], br))
        if hyp_ids[b] is not None:
            assignment[hyp_ids[b]] = spk_ids[a]
    return CpWerResult(assignment, total, tuple(per))


def apply_collar(boundaries, collar, session_length):
    """Widen ``(speaker, start, end)`` segments by ``collar`` seconds on both sides.

    Segments are clipped to ``[0, session_length]`` and same-speaker
    segments that then touch or overlap are merged. The result is sorted by
    ``(start, end, speaker)``.
    """
    if collar < 0:
        raise ValueError("collar must be non-negative")
    by_speaker = {}
    for spk, start, end in boundaries:
        lo = max(0.0, float(start) - collar)
        hi = min(float(session_length), float(end) + collar)
        by_speaker.setdefault(spk, []).append((lo, hi))
    out = []
    for spk, segs in by_speaker.items():
        segs.sort()
        cur_lo, cur_hi = segs[0]
        for lo, hi in segs[1:]:
            if lo <= cur_hi:
                cur_hi = max(cur_hi, hi)
            else:
                out.append((spk, cur_lo, cur_hi))
                cur_lo, cur_hi = lo, hi
        out.append((spk, cur_lo, cur_hi))
    out.sort(key=lambda t: (t[1], t[2], str(t[0])))
    return out


def covered_duration(boundaries):
    """Total per-speaker union length of ``(speaker, start, end)`` segments."""
    return sum(end - start for _, start, end in apply_collar(boundaries, 0.0, math.inf))


def read_transcripts(path, policy=DEFAULT_POLICY):
    """Parse ``session  speaker  start  end  text`` TSV lines into Transcripts by session."""
    rows = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not line or (len(line) == 1 and not line[0].strip()):
                continue
            if len(line) < 4:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(line)}")
            session, speaker, start, end = line[:4]
            text = "\t".join(line[4:])
            rows.setdefault(session, []).append((speaker, float(start), float(end), text))
    return {sid: Transcript.from_rows(sid, r, policy) for sid, r in rows.items()}


def write_transcripts(path, transcripts):
    """Write Transcripts (an iterable or a session-keyed mapping) as TSV."""
    if isinstance(transcripts, dict):
        transcripts = transcripts.values()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for t in transcripts:
            for u in t.utterances:
                fh.write(f"{t.session_id}\t{u.speaker}\t{u.start:.3f}\t{u.end:.3f}\t{' '.join(u.tokens)}\n")
    return path
