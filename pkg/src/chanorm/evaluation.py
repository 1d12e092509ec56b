"""CER, relative improvement, channel matrices, hierarchy statistics, heatmaps.

CER is pooled: total edit distance over total reference length, in percent.
Relative improvement is ``(base - new) / base * 100`` rounded half-up to one
decimal. Heatmaps show absolute (unsquared, unnormalised) embedding
differences.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, ContractError, DimensionError


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row dynamic programme)."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    if len(refs) != len(hyps):
        raise ContractError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ContractError("total reference length is zero")
    return 100.0 * sum(edit_distance(r, h) for r, h in zip(refs, hyps)) / total


def round_half_up(x: float, places: int = 1) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def relative_improvement(cer_base: float, cer_new: float) -> float | None:
    """Percent reduction of ``cer_new`` relative to ``cer_base``; None when the base is zero."""
    if cer_base == 0:
        return None
    if cer_base < 0:
        raise ContractError("baseline CER must be positive")
    base, new = Decimal(repr(cer_base)), Decimal(repr(cer_new))
    return float(((base - new) / base * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class UtteranceResult:
    id: str
    channel: str
    ref: list[int]
    hyp: list[int]
    distance: int


@dataclass
class CERReport:
    per_channel: dict[str, float]
    details: list[UtteranceResult] = field(default_factory=list)
    label: str = ""

    @property
    def channels(self) -> list[str]:
        return list(self.per_channel)

    def average(self, channels: Sequence[str] | None = None) -> float:
        chans = self.channels if channels is None else list(channels)
        return float(np.mean([self.per_channel[c] for c in chans]))


def channel_matrix_eval(encoder, head, corpus, channels: Sequence[str] | None = None, bank=None,
                        tag: str | None = None, label: str = "") -> CERReport:
    """Greedy-decode every test utterance on every channel and pool CER per channel."""
    from .training import FeatureBank

    chans = list(corpus.channel_names if channels is None else channels)
    have = set(corpus.channel_names)
    for c in chans:
        if c not in have:
            raise ConfigError(f"channel {c!r} missing from corpus")
    bank = bank or FeatureBank()
    tag = tag or f"eval:{id(encoder)}"
    from .ctc import greedy_decode

    per, details = {}, []
    for c in chans:
        pairs = [(u, c) for u in corpus]
        embs = bank.embeddings(encoder, tag, pairs)
        refs, hyps = [], []
        for (u, _), e in zip(pairs, embs):
            hyp = greedy_decode(head.logits(e).data)
            refs.append(list(u.tokens))
            hyps.append(hyp)
            details.append(UtteranceResult(u.id, c, list(u.tokens), hyp, edit_distance(u.tokens, hyp)))
        per[c] = cer(refs, hyps)
    return CERReport(per, details, label)


@dataclass
class HierarchyReport:
    pairs: list[tuple[str, str, float]]
    mean: float
    min: float
    best_channel: dict[str, list[str]]


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    rho = stats.spearmanr(a, b).statistic
    return float(rho)


def hierarchy_consistency(matrices: Sequence[CERReport]) -> HierarchyReport:
    """Pairwise Spearman correlation of per-channel CER rankings across models."""
    if len(matrices) < 2:
        raise ContractError("need at least two CER matrices")
    chans = matrices[0].channels
    if len(chans) < 2:
        raise ContractError("need at least two channels to rank")
    for m in matrices[1:]:
        if set(m.channels) != set(chans):
            raise ContractError("CER matrices cover different channel sets")
    pairs = []
    for i in range(len(matrices)):
        for j in range(i + 1, len(matrices)):
            a = [matrices[i].per_channel[c] for c in chans]
            b = [matrices[j].per_channel[c] for c in chans]
            pairs.append((matrices[i].label or str(i), matrices[j].label or str(j), spearman(a, b)))
    rhos = np.array([p[2] for p in pairs])
    best = {}
    for k, m in enumerate(matrices):
        lo = min(m.per_channel.values())
        best[m.label or str(k)] = [c for c in chans if m.per_channel[c] == lo]
    return HierarchyReport(pairs, float(np.mean(rhos)), float(np.min(rhos)), best)


@dataclass
class ImprovementRow:
    method: str
    train_channel: str
    test_channel: str
    cer_baseline: float
    cer_method: float
    rel_percent: float | None


@dataclass
class ImprovementTable:
    rows: list[ImprovementRow]

    HEADER = ("method", "train_channel", "test_channel", "cer_baseline", "cer_method", "rel_percent")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([r.method, r.train_channel, r.test_channel, f"{r.cer_baseline:.2f}",
                        f"{r.cer_method:.2f}", "" if r.rel_percent is None else f"{r.rel_percent:.1f}"])
        return buf.getvalue()


def improvement_table(baseline: CERReport, method: CERReport, method_name: str, train_channel: str
                      ) -> ImprovementTable:
    """One row per test channel plus an AVG row (mean of the per-channel CERs)."""
    rows = []
    for c in baseline.channels:
        b, m = baseline.per_channel[c], method.per_channel[c]
        rows.append(ImprovementRow(method_name, train_channel, c, b, m, relative_improvement(b, m)))
    b, m = baseline.average(), method.average(baseline.channels)
    rows.append(ImprovementRow(method_name, train_channel, "AVG", b, m, relative_improvement(b, m)))
    return ImprovementTable(rows)


def cer_matrix_csv(reports: Sequence[CERReport]) -> str:
    """Rows = models (label), columns = test channels, then AVG.

    Columns are the union of the reports' channels in first-seen order; a
    model not tested on a channel gets an empty cell, and its AVG covers
    only the channels it was tested on.
    """
    chans: list[str] = []
    for r in reports:
        chans += [c for c in r.channels if c not in chans]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model"] + chans + ["AVG"])
    for r in reports:
        cells = [f"{r.per_channel[c]:.4f}" if c in r.per_channel else "" for c in chans]
        w.writerow([r.label] + cells + [f"{r.average():.4f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# heatmaps


@dataclass
class HeatmapData:
    values: np.ndarray  # (D, T)
    mask: np.ndarray  # (T,) bool
    label: str = ""

    def mean_where(self, active: bool) -> float:
        sel = self.mask if active else ~self.mask
        if not sel.any():
            return float("nan")
        return float(self.values[:, sel].mean())


def feature_diff_heatmap(emb_ref, emb_other, mask, label: str = "") -> HeatmapData:
    a = np.asarray(getattr(emb_ref, "data", emb_ref), dtype=np.float64)
    b = np.asarray(getattr(emb_other, "data", emb_other), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"heatmap embeddings must share a (T, D) shape: {a.shape} vs {b.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.shape[0],):
        raise DimensionError(f"mask length {mask.shape} does not match T={a.shape[0]}")
    return HeatmapData(np.abs(a - b).T, mask, label)


def write_pgm(values: np.ndarray, path, vmax: float | None = None) -> Path:
    """Binary greymap; white is zero difference, black is ``vmax`` or more."""
    v = np.asarray(values, dtype=np.float64)
    top = float(v.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(v) if top <= 0 else np.clip(v / top, 0.0, 1.0)
    img = np.round(255.0 * (1.0 - scaled)).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ContractError(f"{path} is not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def heatmap_csv(hm: HeatmapData) -> str:
    """Raw D x T values, one embedding dimension per row, then a ``mask`` row of 0/1."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    T = hm.values.shape[1]
    w.writerow(["dim"] + [f"t{t}" for t in range(T)])
    for d, row in enumerate(hm.values):
        w.writerow([d] + [repr(float(x)) for x in row])
    w.writerow(["mask"] + [int(x) for x in hm.mask])
    return buf.getvalue()
