"""Pipeline stages shared by the subcommands.

Layout of an output directory::

    run_manifest.json            config snapshot, seeds, artifact checksums
    corpus/<language>/           WAV export and JSON-lines corpus manifest
    checkpoints/teacher.cnck     pre-trained encoder
    checkpoints/head_<lang>.cnck its per-language frame classifiers
    checkpoints/adapters.cnck    adapter student (base weights included)
    checkpoints/decoder_<set>.cnck, defa_<set>.cnck
    logs/<checkpoint stem>.tsv   step logs
    reports/*.csv, reports/heatmaps/*

``<set>`` is the channel-set expression with ``~`` spelled ``not-`` and
commas spelled ``+``.

Every stage can be served from a content-addressed cache directory keyed by
a hash of the stage's inputs. Training is deterministic, so a cache hit
yields the same bytes a fresh run would.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from ..dsp import CorpusSpec, ParallelCorpus, build_parallel_corpus, speech_activity_mask, vocab_size, write_corpus
from ..errors import CheckpointError, ConfigError
from ..evaluation import (CERReport, HeatmapData, HierarchyReport, ImprovementTable, cer_matrix_csv,
                          channel_matrix_eval, feature_diff_heatmap, heatmap_csv, hierarchy_consistency,
                          improvement_table, write_pgm)
from ..model import AdapterEncoder, CTCHead, PretrainedEncoder
from ..training import (FeatureBank, TrainConfig, adapter_channels, alignment_mse, defa_finetune, format_log,
                        pretrain_encoder, train_adapters, train_decoder)
from .config import ExperimentConfig, canonical_json, from_dict

log = logging.getLogger("chanorm")

MANIFEST = "run_manifest.json"


def slug(expr: str) -> str:
    return expr.replace("~", "not-").replace(",", "+").replace(" ", "")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def derived_seeds(root: int) -> dict[str, int]:
    """Every stage seed, derived from the root seed."""
    return {"corpus": root, "pretrain": root, "adapter_init": root + 1, "adapters": root,
            "decoder": root, "defa": root}


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    config: dict
    preset: str | None = None
    artifacts: dict[str, str] = field(default_factory=dict)
    tool: str = "chanorm"
    version: str = __version__

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def to_json(self) -> str:
        doc = {"kind": "run-manifest", "tool": self.tool, "version": self.version, "preset": self.preset,
               "seed": self.seed, "seeds": derived_seeds(self.seed), "config": self.config,
               "artifacts": dict(sorted(self.artifacts.items()))}
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"run manifest is not valid JSON: {e}") from None
        if not isinstance(doc, dict) or doc.get("kind") != "run-manifest" or "config" not in doc:
            raise ConfigError("not a run manifest")
        return cls(doc["config"], doc.get("preset"), dict(doc.get("artifacts", {})),
                   doc.get("tool", "chanorm"), doc.get("version", ""))

    def experiment_config(self) -> ExperimentConfig:
        return from_dict(self.config)


class Workspace:
    """An output directory plus its manifest; every written file is checksummed into it."""

    def __init__(self, out_dir, cfg: ExperimentConfig, preset: str | None = None, cache_dir=None):
        self.root = Path(out_dir)
        self.cfg = cfg
        self.root.mkdir(parents=True, exist_ok=True)
        self.cache = Path(cache_dir) if cache_dir else None
        path = self.root / MANIFEST
        snapshot = cfg.to_dict()
        if path.exists():
            old = RunManifest.from_json(path.read_text(encoding="utf-8"))
            if canonical_json(old.config) != canonical_json(snapshot):
                raise ConfigError(f"{self.root} already holds a run with a different config")
            self.manifest = old
            self.manifest.preset = preset or old.preset
        else:
            self.manifest = RunManifest(snapshot, preset)
        self.save_manifest()

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, path) -> None:
        rel = Path(path).relative_to(self.root).as_posix()
        self.manifest.artifacts[rel] = sha256_file(path)

    def write_text(self, rel: str, text: str) -> Path:
        p = self.path(*rel.split("/"))
        p.write_text(text, encoding="utf-8", newline="")
        self.record(p)
        return p

    def save_manifest(self) -> None:
        (self.root / MANIFEST).write_text(self.manifest.to_json(), encoding="utf-8")

    # cache -----------------------------------------------------------------
    def cached(self, key: str, rels: list[str]) -> bool:
        """Copy ``rels`` from the cache entry ``key`` into the workspace; False on a miss."""
        if self.cache is None:
            return False
        entry = self.cache / key
        if not all((entry / Path(r).name).exists() for r in rels):
            return False
        for r in rels:
            dst = self.path(*r.split("/"))
            shutil.copyfile(entry / Path(r).name, dst)
            self.record(dst)
        return True

    def store(self, key: str, rels: list[str]) -> None:
        if self.cache is None:
            return
        entry = self.cache / key
        entry.mkdir(parents=True, exist_ok=True)
        for r in rels:
            tmp = entry / (Path(r).name + ".part")
            shutil.copyfile(self.root / r, tmp)
            tmp.replace(entry / Path(r).name)


def stage_key(**parts) -> str:
    return hashlib.sha256(canonical_json(dict(parts, version=__version__)).encode()).hexdigest()[:24]


# ---------------------------------------------------------------------------
# corpus


def corpus_spec(cfg: ExperimentConfig, language: str) -> CorpusSpec:
    c = cfg.corpus
    return CorpusSpec(channels=list(c.channels), n_train=c.n_train, n_dev=c.n_dev, n_test=c.n_test,
                      min_tokens=c.min_tokens, max_tokens=c.max_tokens, language_id=language)


def corpus_key(cfg: ExperimentConfig, language: str) -> dict:
    c = cfg.to_dict()["corpus"]
    c.pop("write_audio")
    c.pop("decoder_language")
    c["language"] = language
    return dict(c, seed=cfg.seed)


class Corpora:
    """Generated corpora, one per language, built on first use."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._built: dict[str, dict[str, ParallelCorpus]] = {}

    def __getitem__(self, language: str) -> dict[str, ParallelCorpus]:
        if language not in self._built:
            log.info("generating %s corpus", language)
            self._built[language] = build_parallel_corpus(corpus_spec(self.cfg, language), self.cfg.seed)
        return self._built[language]

    def languages(self) -> list[str]:
        c = self.cfg.corpus
        return [c.language] if c.decoder_language == c.language else [c.language, c.decoder_language]


def export_corpus(ws: Workspace, corpora: Corpora) -> list[Path]:
    out = []
    for lang in corpora.languages():
        d = ws.root / "corpus" / lang
        d.mkdir(parents=True, exist_ok=True)
        manifest = write_corpus(corpora[lang], d)
        for p in sorted(d.rglob("*")):
            if p.is_file():
                ws.record(p)
        out.append(manifest)
    ws.save_manifest()
    return out


# ---------------------------------------------------------------------------
# training stages


def teacher_key(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    return stage_key(stage="teacher", encoder=d["encoder"], pretrain=d["pretrain"], seed=cfg.seed)


def _head_rels(cfg) -> list[str]:
    from ..dsp import LANGUAGES
    return [f"checkpoints/head_{lang}.cnck" for lang in LANGUAGES]


def stage_teacher(ws: Workspace) -> tuple[PretrainedEncoder, dict[str, CTCHead]]:
    cfg = ws.cfg
    rels = ["checkpoints/teacher.cnck", "logs/teacher.tsv"] + _head_rels(cfg)
    key = teacher_key(cfg)
    if not ws.cached(key, rels):
        log.info("pre-training teacher (%d steps)", cfg.pretrain.steps)
        records = []
        pcfg = dataclasses.replace(cfg.pretrain, seed=derived_seeds(cfg.seed)["pretrain"])
        enc, heads = pretrain_encoder(cfg.encoder, pcfg, log=records)
        save_checkpoint(enc, ws.path("checkpoints", "teacher.cnck"), regime="teacher", seed=pcfg.seed,
                        steps=pcfg.steps)
        for lang, h in heads.items():
            save_checkpoint(h, ws.path("checkpoints", f"head_{lang}.cnck"), regime="teacher_head",
                            language=lang, teacher=enc.checksum())
        ws.write_text("logs/teacher.tsv", format_log(records))
        for r in rels:
            ws.record(ws.root / r)
        ws.store(key, rels)
    ws.save_manifest()
    return load_teacher(ws)


def _load(path, kind: str, what: str):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing {what} checkpoint {path}")
    try:
        m = load_checkpoint(path)
    except CheckpointError as e:
        raise ConfigError(f"{path}: {e}") from None
    if m.kind != kind:
        raise ConfigError(f"{path} holds a {m.kind}, expected a {kind}")
    return m


def load_teacher(ws: Workspace, path=None) -> tuple[PretrainedEncoder, dict[str, CTCHead]]:
    from ..dsp import LANGUAGES
    enc = _load(path or ws.root / "checkpoints" / "teacher.cnck", "encoder", "teacher")
    if enc.cfg != ws.cfg.encoder:
        raise ConfigError("teacher checkpoint was trained with a different encoder config")
    heads = {}
    for lang in LANGUAGES:
        p = (Path(path).parent if path else ws.root / "checkpoints") / f"head_{lang}.cnck"
        if p.exists():
            heads[lang] = _load(p, "ctc_head", "teacher head")
    return enc, heads


def adapters_key(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    return stage_key(stage="adapters", teacher=teacher_key(cfg), corpus=corpus_key(cfg, cfg.corpus.language),
                     train=d["adapters"])


def _regime_cfg(cfg: ExperimentConfig, regime: str) -> TrainConfig:
    return dataclasses.replace(getattr(cfg, regime), seed=derived_seeds(cfg.seed)[regime])


def stage_adapters(ws: Workspace, teacher: PretrainedEncoder, corpora: Corpora, bank: FeatureBank
                   ) -> AdapterEncoder:
    cfg = ws.cfg
    rels = ["checkpoints/adapters.cnck", "logs/adapters.tsv"]
    key = adapters_key(cfg)
    if not ws.cached(key, rels):
        splits = corpora[cfg.corpus.language]
        tcfg = _regime_cfg(cfg, "adapters")
        log.info("training adapters (%d epochs)", tcfg.epochs)
        student = AdapterEncoder(teacher, derived_seeds(cfg.seed)["adapter_init"])
        records = []
        ck = train_adapters(splits["train"], splits["dev"], teacher, student, tcfg, bank, records)
        ck.metadata["teacher"] = teacher.checksum()
        save_checkpoint(ck, ws.path("checkpoints", "adapters.cnck"))
        ws.write_text("logs/adapters.tsv", format_log(records))
        ws.record(ws.root / rels[0])
        ws.store(key, rels)
    ws.save_manifest()
    return load_adapters(ws, teacher)


def load_adapters(ws: Workspace, teacher: PretrainedEncoder, path=None) -> AdapterEncoder:
    path = Path(path or ws.root / "checkpoints" / "adapters.cnck")
    student = _load(path, "adapter_encoder", "adapter")
    if student.base_checksum() != teacher.checksum():
        raise ConfigError(f"{path} was trained on a different teacher")
    return student


def decoder_key(cfg: ExperimentConfig, expr: str) -> str:
    d = cfg.to_dict()
    return stage_key(stage="decoder", teacher=teacher_key(cfg),
                     corpus=corpus_key(cfg, cfg.corpus.decoder_language), train=d["decoder"],
                     channels=cfg.channel_set(expr))


def stage_decoder(ws: Workspace, teacher: PretrainedEncoder, heads: dict[str, CTCHead], expr: str,
                  corpora: Corpora, bank: FeatureBank) -> CTCHead:
    cfg = ws.cfg
    lang = cfg.corpus.decoder_language
    rels = [f"checkpoints/decoder_{slug(expr)}.cnck", f"logs/decoder_{slug(expr)}.tsv"]
    key = decoder_key(cfg, expr)
    if not ws.cached(key, rels):
        if lang not in heads:
            raise ConfigError(f"no pre-trained {lang} head next to the teacher checkpoint")
        splits = corpora[lang]
        tcfg = _regime_cfg(cfg, "decoder")
        log.info("training %s decoder on %s", lang, expr)
        head = heads[lang].clone()
        records = []
        ck = train_decoder(splits["train"], splits["dev"], cfg.channel_set(expr), teacher, head, tcfg, bank,
                           records)
        ck.metadata.update(teacher=teacher.checksum(), language=lang, expr=expr)
        save_checkpoint(ck, ws.path(*rels[0].split("/")))
        ws.write_text(rels[1], format_log(records))
        ws.record(ws.root / rels[0])
        ws.store(key, rels)
    ws.save_manifest()
    return load_head(ws, "decoder", expr, teacher)


def load_head(ws: Workspace, regime: str, expr: str, teacher: PretrainedEncoder, path=None) -> CTCHead:
    path = Path(path or ws.root / "checkpoints" / f"{regime}_{slug(expr)}.cnck")
    head = _load(path, "ctc_head", f"{regime} ({expr})")
    meta = read_checkpoint(path).metadata
    lang = ws.cfg.corpus.decoder_language
    if head.vocab_size != vocab_size(lang) or meta.get("language", lang) != lang:
        raise ConfigError(f"{path} is not a {lang} decoder")
    if head.model_dim != teacher.cfg.model_dim or meta.get("teacher", teacher.checksum()) != teacher.checksum():
        raise ConfigError(f"{path} was trained on a different teacher")
    want = ws.cfg.channel_set(expr)
    if list(meta.get("channels", want)) != want:
        raise ConfigError(f"{path} was trained on {meta.get('channels')}, config asks for {want}")
    return head


def stage_defa(ws: Workspace, teacher: PretrainedEncoder, student: AdapterEncoder, head: CTCHead, expr: str,
               corpora: Corpora, bank: FeatureBank) -> CTCHead:
    cfg = ws.cfg
    rels = [f"checkpoints/defa_{slug(expr)}.cnck", f"logs/defa_{slug(expr)}.tsv"]
    d = cfg.to_dict()
    key = stage_key(stage="defa", decoder=decoder_key(cfg, expr), adapters=adapters_key(cfg), train=d["defa"])
    if not ws.cached(key, rels):
        lang = cfg.corpus.decoder_language
        splits = corpora[lang]
        log.info("DEFA fine-tuning the %s decoder", expr)
        head = head.clone()
        records = []
        ck = defa_finetune(head, student, splits["train"], splits["dev"], cfg.channel_set(expr),
                           _regime_cfg(cfg, "defa"), bank, records)
        ck.metadata.update(teacher=teacher.checksum(), language=lang, expr=expr,
                           adapters=student.adapter_checksum())
        save_checkpoint(ck, ws.path(*rels[0].split("/")))
        ws.write_text(rels[1], format_log(records))
        ws.record(ws.root / rels[0])
        ws.store(key, rels)
    ws.save_manifest()
    return load_head(ws, "defa", expr, teacher)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class HeatmapStats:
    utterance: str
    channel: str
    teacher_speech: float
    student_speech: float
    teacher_silence: float
    student_silence: float

    @property
    def student_closer(self) -> bool:
        return self.student_speech < self.teacher_speech and self.student_silence < self.teacher_silence


@dataclass
class EvalResult:
    reports: dict[tuple[str, str], CERReport] = field(default_factory=dict)
    improvements: list[ImprovementTable] = field(default_factory=list)
    hierarchy: HierarchyReport | None = None
    alignment: dict[str, tuple[float, float]] = field(default_factory=dict)
    heatmaps: list[HeatmapStats] = field(default_factory=list)
    clean_channel: str = "COND"

    def distorted(self, report: CERReport) -> list[str]:
        return [c for c in report.channels if c != self.clean_channel]


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _subset(report: CERReport, channels) -> CERReport:
    return CERReport({c: report.per_channel[c] for c in channels}, [], report.label)


def evaluate(ws: Workspace, teacher: PretrainedEncoder, student: AdapterEncoder | None,
             decoders: dict[str, CTCHead], defa: dict[str, CTCHead], corpora: Corpora, bank: FeatureBank
             ) -> EvalResult:
    cfg = ws.cfg
    lang = cfg.corpus.decoder_language
    test = corpora[lang]["test"]
    res = EvalResult(clean_channel=cfg.adapters.clean_channel)
    tags = {"pre": "pre:" + teacher.checksum()[:16]}
    if student is not None:
        tags["adp"] = "adp:" + student.adapter_checksum()[:16]
    for e in cfg.experiments:
        enc, tag = (teacher, tags["pre"]) if e.method == "Van_pre" else (student, tags.get("adp"))
        if enc is None:
            raise ConfigError(f"{e.method} needs the adapter checkpoint")
        head = defa[e.train] if e.method == "DEFA" else decoders[e.train]
        log.info("evaluating %s | %s", e.method, e.train)
        res.reports[(e.method, e.train)] = channel_matrix_eval(enc, head, test, cfg.channel_set(e.test), bank,
                                                               tag, f"{e.method}|{e.train}")

    reports = list(res.reports.values())
    ws.write_text("reports/cer_matrix.csv", cer_matrix_csv(reports))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "train_channels", "n_test_channels", "avg_cer", "avg_cer_distorted"])
    for (method, train), r in res.reports.items():
        dist = res.distorted(r)
        w.writerow([method, train, len(r.channels), _fmt(r.average()), _fmt(r.average(dist)) if dist else ""])
    ws.write_text("reports/summary.csv", buf.getvalue())

    for (method, train), r in res.reports.items():
        base = res.reports.get(("Van_pre", train))
        if method == "Van_pre" or base is None:
            continue
        if not set(r.channels) <= set(base.channels):
            raise ConfigError(f"{method}|{train}: test channels not covered by the Van_pre run")
        res.improvements.append(improvement_table(_subset(base, r.channels), r, method, train))
    if res.improvements:
        header, *_ = res.improvements[0].to_csv().splitlines(keepends=True)
        body = [ln for t in res.improvements for ln in t.to_csv().splitlines(keepends=True)[1:]]
        ws.write_text("reports/improvement.csv", "".join([header] + body))

    if cfg.hierarchy:
        res.hierarchy = hierarchy_consistency([r for (m, _), r in res.reports.items() if m == "Van_pre"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_a", "model_b", "spearman"])
        for a, b, rho in res.hierarchy.pairs:
            w.writerow([a, b, _fmt(rho)])
        w.writerow(["MEAN", "", _fmt(res.hierarchy.mean)])
        w.writerow(["MIN", "", _fmt(res.hierarchy.min)])
        ws.write_text("reports/hierarchy.csv", buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "best_channels"])
        for model, best in res.hierarchy.best_channel.items():
            w.writerow([model, ";".join(best)])
        ws.write_text("reports/hierarchy_best.csv", buf.getvalue())

    if student is not None:
        dev = corpora[cfg.corpus.language]["dev"]
        clean = cfg.adapters.clean_channel
        seen = adapter_channels(dev, cfg.adapters)
        groups = {"seen": seen, "unseen": [c for c in dev.channel_names if c not in seen]}
        groups.update({c: [c] for c in dev.channel_names})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channels", "mse_teacher", "mse_student", "drop_percent"])
        for name, chans in groups.items():
            if not chans:
                continue
            before = alignment_mse(teacher, teacher, dev, chans, clean, bank)
            after = alignment_mse(teacher, student, dev, chans, clean, bank)
            res.alignment[name] = (before, after)
            drop = "" if before == 0 else f"{100.0 * (before - after) / before:.1f}"
            w.writerow([name, f"{before:.6e}", f"{after:.6e}", drop])
        ws.write_text("reports/alignment_dev.csv", buf.getvalue())

    if cfg.heatmaps:
        res.heatmaps = _heatmaps(ws, teacher, student, corpora[cfg.corpus.language]["test"], bank, tags)
    ws.save_manifest()
    return res


def _heatmaps(ws: Workspace, teacher, student, test: ParallelCorpus, bank: FeatureBank, tags) -> list[HeatmapStats]:
    cfg = ws.cfg
    clean = cfg.adapters.clean_channel
    utts = list(test)
    ref = bank.embeddings(teacher, tags["pre"], [(u, clean) for u in utts])
    stats = []
    for req in cfg.heatmaps:
        t_emb = bank.embeddings(teacher, tags["pre"], [(u, req.channel) for u in utts])
        s_emb = bank.embeddings(student, tags["adp"], [(u, req.channel) for u in utts])
        for k, u in enumerate(utts):
            mask = speech_activity_mask(u.waveforms[clean], bank.cfg)
            ht = feature_diff_heatmap(ref[k], t_emb[k], mask, f"{u.id}:{req.channel}:teacher")
            hs = feature_diff_heatmap(ref[k], s_emb[k], mask, f"{u.id}:{req.channel}:student")
            stats.append(HeatmapStats(u.id, req.channel, ht.mean_where(True), hs.mean_where(True),
                                      ht.mean_where(False), hs.mean_where(False)))
            if k < req.images:
                _emit_pair(ws, u.id, req.channel, ht, hs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["utterance", "channel", "teacher_speech", "student_speech", "teacher_silence", "student_silence"])
    for s in stats:
        w.writerow([s.utterance, s.channel] + [f"{v:.6e}" for v in (s.teacher_speech, s.student_speech,
                                                                   s.teacher_silence, s.student_silence)])
    ws.write_text("reports/heatmap_summary.csv", buf.getvalue())
    return stats


def _emit_pair(ws: Workspace, uid: str, channel: str, ht: HeatmapData, hs: HeatmapData) -> None:
    # a shared scale so the two images compare directly
    vmax = float(max(ht.values.max(), hs.values.max()))
    for who, hm in (("teacher", ht), ("student", hs)):
        stem = f"reports/heatmaps/{uid}_{channel}_{who}"
        p = write_pgm(hm.values, ws.path(*f"{stem}.pgm".split("/")), vmax)
        ws.record(p)
        ws.write_text(f"{stem}.csv", heatmap_csv(hm))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class RunResult:
    workspace: Workspace
    eval: EvalResult
    teacher: PretrainedEncoder
    student: AdapterEncoder | None
    decoders: dict[str, CTCHead]
    defa: dict[str, CTCHead]


def run_pipeline(cfg: ExperimentConfig, out_dir, preset: str | None = None, cache_dir=None,
                 write_audio: bool | None = None) -> RunResult:
    """corpus -> teacher -> adapters -> decoders -> DEFA -> reports."""
    ws = Workspace(out_dir, cfg, preset, cache_dir)
    corpora = Corpora(cfg)
    if cfg.corpus.write_audio if write_audio is None else write_audio:
        export_corpus(ws, corpora)
    bank = FeatureBank()
    teacher, heads = stage_teacher(ws)
    student = stage_adapters(ws, teacher, corpora, bank) if cfg.needs_adapters else None
    decoders = {expr: stage_decoder(ws, teacher, heads, expr, corpora, bank) for expr in cfg.decoder_sets()}
    defa = {}
    for e in cfg.experiments:
        if e.method == "DEFA" and e.train not in defa:
            defa[e.train] = stage_defa(ws, teacher, student, decoders[e.train], e.train, corpora, bank)
    res = evaluate(ws, teacher, student, decoders, defa, corpora, bank)
    return RunResult(ws, res, teacher, student, decoders, defa)
