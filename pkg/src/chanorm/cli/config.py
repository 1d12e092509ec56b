"""Experiment configuration: a YAML key/value tree resolved into typed sections.

Grammar (every section optional, unknown keys are rejected)::

    name: my-run                  # free text, copied into reports
    seed: 0                       # the single root seed
    corpus:
      language: LangA             # corpus the adapters are trained on
      decoder_language: LangA     # corpus the decoders are trained and tested on
      n_train: 240
      n_dev: 40
      n_test: 150
      min_tokens: 3
      max_tokens: 5
      write_audio: true           # WAV export during `reproduce`
      channels: default           # or a list of channel entries, see below
    encoder:  {model_dim: 64, num_blocks: 4, ...}      # EncoderConfig fields
    pretrain: {steps: 500, ...}                        # PretrainConfig fields
    adapters: {epochs: 3, peak_lr: 1.0e-4, clean_channel: COND, excluded_channels: [WCAM]}
    decoder:  {epochs: 3, peak_lr: 1.0e-4}            # TrainConfig fields
    defa:     {epochs: 3, peak_lr: 1.0e-4}
    experiments:
      - {method: Van_pre, train: COND}                 # test defaults to "all"
      - {method: Van_adp, train: "~WCAM", test: "COND,ADR"}
    heatmaps:
      - {channel: ADR, images: 2}
    hierarchy: false

A channel entry is either a full profile (``fir_taps`` given explicitly) or
a compact one with ``band: [lo, hi]`` in Hz, where a null edge means no
edge. ``noise_snr_db: null`` means no noise. An entry named after a built-in
profile starts from that profile, so a bare ``ADR`` (or ``{name: ADR,
noise_snr_db: 10}``) reuses the default filter and overrides only what is
given. Other names start from the identity channel.

Channel-set expressions: ``all``, a single name, ``"A,B"``, or ``"~X"``
(every channel except X).

The sub-configs carry no seeds of their own; every stage seeds from the
root ``seed``. Omitted fields take the dataclass defaults, which for the
three training regimes are the full-scale values (3 epochs at 1e-4); the
presets in :mod:`chanorm.cli.presets` hold the desk-scale overrides.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..dsp import LANGUAGES, ChannelProfile, band_taps, default_channels
from ..errors import ConfigError
from ..model import EncoderConfig
from ..training import PretrainConfig, TrainConfig, expand_channel_set

METHODS = ("Van_pre", "Van_adp", "DEFA")


@dataclass(frozen=True)
class Experiment:
    method: str
    train: str
    test: str = "all"


@dataclass(frozen=True)
class HeatmapRequest:
    channel: str
    images: int = 2


@dataclass
class CorpusSection:
    language: str = "LangA"
    decoder_language: str = "LangA"
    n_train: int = 240
    n_dev: int = 40
    n_test: int = 150
    min_tokens: int = 3
    max_tokens: int = 5
    write_audio: bool = True
    channels: list[ChannelProfile] = field(default_factory=default_channels)

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]


@dataclass
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    corpus: CorpusSection = field(default_factory=CorpusSection)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapters: TrainConfig = field(default_factory=TrainConfig)
    decoder: TrainConfig = field(default_factory=TrainConfig)
    defa: TrainConfig = field(default_factory=TrainConfig)
    experiments: list[Experiment] = field(default_factory=list)
    heatmaps: list[HeatmapRequest] = field(default_factory=list)
    hierarchy: bool = False

    def channel_set(self, expr: str) -> list[str]:
        names = self.corpus.channel_names
        return list(names) if expr == "all" else expand_channel_set(expr, names)

    def decoder_sets(self) -> list[str]:
        """Distinct decoder-training expressions, in first-use order."""
        seen = []
        for e in self.experiments:
            if e.train not in seen:
                seen.append(e.train)
        return seen

    @property
    def needs_adapters(self) -> bool:
        return bool(self.heatmaps) or any(e.method != "Van_pre" for e in self.experiments)

    def to_dict(self) -> dict:
        """Fully resolved tree; ``from_dict(to_dict())`` gives an equal config."""
        c = self.corpus
        corpus = {k: getattr(c, k) for k in ("language", "decoder_language", "n_train", "n_dev", "n_test",
                                             "min_tokens", "max_tokens", "write_audio")}
        corpus["channels"] = [ch.to_dict() for ch in c.channels]
        return {
            "name": self.name,
            "seed": self.seed,
            "corpus": corpus,
            "encoder": dataclasses.asdict(self.encoder),
            "pretrain": _strip_seed(dataclasses.asdict(self.pretrain)),
            "adapters": _strip_seed(dataclasses.asdict(self.adapters)),
            "decoder": _strip_seed(dataclasses.asdict(self.decoder)),
            "defa": _strip_seed(dataclasses.asdict(self.defa)),
            "experiments": [dataclasses.asdict(e) for e in self.experiments],
            "heatmaps": [dataclasses.asdict(h) for h in self.heatmaps],
            "hierarchy": self.hierarchy,
        }

    def fingerprint(self) -> str:
        return canonical_json(self.to_dict())


def _strip_seed(d: dict) -> dict:
    d = dict(d)
    d.pop("seed", None)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# parsing


def _check_keys(where: str, d: Any, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")
    return d


def _typed(where: str, value: Any, kind: type):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is tuple:
        if isinstance(value, str) or not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def _dataclass_from(where: str, cls, d: Any, **fixed):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in fixed}
    d = _check_keys(where, d, fields)
    kw = {}
    for k, v in d.items():
        f = fields[k]
        ann = f.type.__name__ if isinstance(f.type, type) else str(f.type)
        if v is None and "None" in ann:
            kw[k] = None
            continue
        if ann.startswith("tuple[float"):
            kw[k] = tuple(_typed(f"{where}.{k}[]", x, float) for x in _typed(f"{where}.{k}", v, tuple))
        elif ann.startswith("tuple"):
            kw[k] = tuple(str(x) for x in _typed(f"{where}.{k}", v, tuple))
        elif ann.startswith("float"):
            kw[k] = _typed(f"{where}.{k}", v, float)
        elif ann.startswith("int"):
            kw[k] = _typed(f"{where}.{k}", v, int)
        elif ann.startswith("bool"):
            kw[k] = _typed(f"{where}.{k}", v, bool)
        else:
            kw[k] = _typed(f"{where}.{k}", v, str)
    try:
        return cls(**kw, **fixed)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None


def _channel(where: str, d: Any) -> ChannelProfile:
    builtin = {c.name: c for c in default_channels()}
    if isinstance(d, str):
        if d not in builtin:
            raise ConfigError(f"{where}: {d!r} is not a built-in channel; give a mapping with its profile")
        d = {"name": d}
    d = _check_keys(where, d, {"name", "band", "fir_taps", "noise_snr_db", "gain_db", "clip_threshold",
                               "severity_rank"})
    if "name" not in d:
        raise ConfigError(f"{where}.name: missing")
    if "band" in d and "fir_taps" in d:
        raise ConfigError(f"{where}.band: give either band or fir_taps, not both")
    d = dict(d)
    if d["name"] in builtin:
        start = builtin[d["name"]].to_dict()
        if "band" in d:
            start.pop("fir_taps")
        d = {**start, **d}
    if "band" in d:
        band = d.pop("band")
        if not isinstance(band, (list, tuple)) or len(band) != 2:
            raise ConfigError(f"{where}.band: expected [lo, hi]")
        lo, hi = band
        if lo is None and hi is None:
            d["fir_taps"] = [1.0]
        else:
            try:
                d["fir_taps"] = list(band_taps(lo, hi))
            except ValueError as e:
                raise ConfigError(f"{where}.band: {e}") from None
    snr = d.get("noise_snr_db")
    if snr is not None and (not isinstance(snr, (int, float)) or math.isnan(snr)):
        raise ConfigError(f"{where}.noise_snr_db: expected a number or null")
    try:
        return ChannelProfile.from_dict(d)
    except (ConfigError, TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _corpus(d: Any) -> CorpusSection:
    base = {f.name for f in dataclasses.fields(CorpusSection)}
    d = dict(_check_keys("corpus", d, base))
    raw = d.pop("channels", "default")
    sec = _dataclass_from("corpus", CorpusSection, d, channels=[])
    if raw == "default":
        sec.channels = default_channels()
    elif isinstance(raw, list):
        sec.channels = [_channel(f"corpus.channels[{i}]", c) for i, c in enumerate(raw)]
    else:
        raise ConfigError("corpus.channels: expected 'default' or a list of channels")
    names = sec.channel_names
    if not names:
        raise ConfigError("corpus.channels: at least one channel is required")
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"corpus.channels: duplicate channel name {dupes[0]!r}")
    for k in ("language", "decoder_language"):
        if getattr(sec, k) not in LANGUAGES:
            raise ConfigError(f"corpus.{k}: must be one of {', '.join(LANGUAGES)}")
    for k in ("n_train", "n_dev", "n_test"):
        if getattr(sec, k) < 1:
            raise ConfigError(f"corpus.{k}: must be at least 1")
    if not 1 <= sec.min_tokens <= sec.max_tokens:
        raise ConfigError("corpus.min_tokens: need 1 <= min_tokens <= max_tokens")
    return sec


def from_dict(d: Any) -> ExperimentConfig:
    d = _check_keys("config", d, {f.name for f in dataclasses.fields(ExperimentConfig)})
    cfg = ExperimentConfig()
    if "name" in d:
        cfg.name = str(d["name"])
    if "seed" in d:
        cfg.seed = _typed("seed", d["seed"], int)
    if cfg.seed < 0:
        raise ConfigError("seed: must be non-negative")
    if "corpus" in d:
        cfg.corpus = _corpus(d["corpus"])
    if "encoder" in d:
        cfg.encoder = _dataclass_from("encoder", EncoderConfig, d["encoder"])
    if "pretrain" in d:
        cfg.pretrain = _dataclass_from("pretrain", PretrainConfig, d["pretrain"], seed=0)
    for regime in ("adapters", "decoder", "defa"):
        if regime in d:
            setattr(cfg, regime, _dataclass_from(regime, TrainConfig, d[regime], seed=0))
    if "hierarchy" in d:
        cfg.hierarchy = _typed("hierarchy", d["hierarchy"], bool)
    exps = d.get("experiments") or []
    if not isinstance(exps, list):
        raise ConfigError("experiments: expected a list")
    for i, e in enumerate(exps):
        e = _check_keys(f"experiments[{i}]", e, {"method", "train", "test"})
        for k in ("method", "train"):
            if k not in e:
                raise ConfigError(f"experiments[{i}].{k}: missing")
        if e["method"] not in METHODS:
            raise ConfigError(f"experiments[{i}].method: must be one of {', '.join(METHODS)}")
        cfg.experiments.append(Experiment(str(e["method"]), str(e["train"]), str(e.get("test", "all"))))
    hms = d.get("heatmaps") or []
    if not isinstance(hms, list):
        raise ConfigError("heatmaps: expected a list")
    for i, h in enumerate(hms):
        cfg.heatmaps.append(_dataclass_from(f"heatmaps[{i}]", HeatmapRequest, h))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks: every channel named anywhere must exist in the corpus."""
    names = cfg.corpus.channel_names
    for regime in ("adapters", "decoder", "defa"):
        tc = getattr(cfg, regime)
        if regime == "adapters" and cfg.needs_adapters:
            if tc.clean_channel not in names:
                raise ConfigError(f"adapters.clean_channel: unknown channel {tc.clean_channel!r}")
            for x in tc.excluded_channels:
                if x not in names:
                    raise ConfigError(f"adapters.excluded_channels: unknown channel {x!r}")
    for i, e in enumerate(cfg.experiments):
        for k in ("train", "test"):
            try:
                cfg.channel_set(getattr(e, k))
            except ConfigError as err:
                raise ConfigError(f"experiments[{i}].{k}: {err}") from None
    for i, h in enumerate(cfg.heatmaps):
        if h.channel not in names:
            raise ConfigError(f"heatmaps[{i}].channel: unknown channel {h.channel!r}")
        if h.images < 0:
            raise ConfigError(f"heatmaps[{i}].images: must be non-negative")
    if cfg.hierarchy and sum(e.method == "Van_pre" for e in cfg.experiments) < 2:
        raise ConfigError("hierarchy: needs at least two Van_pre experiments")
    if cfg.encoder.n_mels != 26:
        raise ConfigError("encoder.n_mels: must match the 26-band feature front end")


def merge(base: dict, override: dict) -> dict:
    """Recursive dict update; lists and scalars in ``override`` replace wholesale."""
    out = dict(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def read_tree(path) -> dict:
    """Parse a YAML (or JSON) file into a plain tree; a run manifest yields its config snapshot."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")  # OSError here is an I/O failure, not a config error
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if tree.get("kind") == "run-manifest":
        return tree["config"]
    return tree


def load_config(path) -> ExperimentConfig:
    return from_dict(read_tree(path))


def dump_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
