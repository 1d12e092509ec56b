"""Optimisation loops: teacher pre-training, adapter alignment, decoder training, and DEFA.

The adapter and decoder loops share the same schedule (linear warm-up over the first 10%
of updates, then linear decay to zero), AdamW, and best-on-dev checkpoint
selection. Updates are numbered from 1; update ``s`` uses ``lr_at(s)``.

The training log is tab-separated with header ``step lr loss dev``. ``lr``
is written with ``repr`` so it round-trips exactly; ``dev`` is empty on
steps without a dev evaluation.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .dsp import (LANGUAGES, FeatureConfig, ParallelCorpus, SynthConfig, Utterance, apply_channel, log_mel,
                  frame_labels, random_channel, synth_utterance, vocab_size)
from .errors import ConfigError, ContractError, NumericalError
from .evaluation import cer
from .model import AdapterEncoder, CTCHead, EncoderConfig, ModelCheckpoint, PretrainedEncoder, encoder_forward, to_checkpoint
from .tensorcore import Tape, Tensor, backward, cross_entropy, mse_loss
from .ctc import ctc_loss, greedy_decode

# ---------------------------------------------------------------------------
# schedule and optimiser


@dataclass(frozen=True)
class LRSchedule:
    total_steps: int
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.10

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.total_steps))


def lr_at(step: int, sched: LRSchedule) -> float:
    """Piecewise-linear: 0 -> peak over the warm-up, then peak -> 0 at ``total_steps``."""
    if not 0 <= step <= sched.total_steps:
        raise ContractError(f"step {step} outside [0, {sched.total_steps}]")
    w = sched.warmup_steps
    if step < w:
        return sched.peak_lr * (step / w)
    if sched.total_steps == w:
        return sched.peak_lr
    # ratio first, so the peak itself comes out exact
    return sched.peak_lr * ((sched.total_steps - step) / (sched.total_steps - w))


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamWState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], **hyper)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamWState, lr: float) -> None:
    """One AdamW update in place (decoupled weight decay, bias-corrected moments)."""
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    for p, g in zip(params, grads):
        if g is not None and not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise NumericalError(f"non-finite gradient for {p.name or 'parameter'}: {bad} of {g.size} entries "
                                 f"(step {state.step + 1})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        if state.weight_decay:
            p.data = p.data - lr * state.weight_decay * p.data
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamWState.for_params(self.params, beta1=betas[0], beta2=betas[1], eps=eps,
                                           weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr)


# ---------------------------------------------------------------------------
# configuration and logging


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 24
    peak_lr: float = 1e-4
    warmup_fraction: float = 0.10
    weight_decay: float | None = None  # None: 0 for adapters, 0.01 for decoders
    seed: int = 0
    clean_channel: str = "COND"
    excluded_channels: tuple[str, ...] = ("WCAM",)
    dev_interval: int | None = None  # in updates; None = end of every epoch

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.clean_channel in self.excluded_channels:
            raise ConfigError(f"clean channel {self.clean_channel} cannot also be excluded")


@dataclass
class LogRecord:
    step: int
    lr: float
    loss: float
    dev: float | None = None

    def line(self) -> str:
        dev = "" if self.dev is None else repr(self.dev)
        return f"{self.step}\t{self.lr!r}\t{self.loss!r}\t{dev}"


LOG_HEADER = "step\tlr\tloss\tdev"


def format_log(records: Iterable[LogRecord]) -> str:
    return "\n".join([LOG_HEADER] + [r.line() for r in records]) + "\n"


def parse_log(text: str) -> list[LogRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != LOG_HEADER:
        raise ContractError("not a training log")
    out = []
    for ln in lines[1:]:
        s, lr, loss, dev = ln.split("\t")
        out.append(LogRecord(int(s), float(lr), float(loss), float(dev) if dev else None))
    return out


# ---------------------------------------------------------------------------
# data plumbing


def _ukey(utt: Utterance) -> tuple:
    return utt.id, utt.language_id, utt.seed


class FeatureBank:
    """Lazy cache of log-mel features keyed by utterance identity and channel.

    Utterance ids repeat across corpora built with different seeds, so the
    key also carries the language and the synthesis seed.
    """

    def __init__(self, cfg: FeatureConfig = FeatureConfig()):
        self.cfg = cfg
        self._feats: dict[tuple, np.ndarray] = {}
        self._emb: dict[tuple, np.ndarray] = {}

    def features(self, utt: Utterance, channel: str) -> np.ndarray:
        key = (_ukey(utt), channel)
        f = self._feats.get(key)
        if f is None:
            if channel not in utt.waveforms:
                raise ConfigError(f"utterance {utt.id} has no channel {channel!r}")
            f = log_mel(utt.waveforms[channel], self.cfg).frames
            self._feats[key] = f
        return f

    def embeddings(self, encoder, tag: str, pairs: Sequence[tuple[Utterance, str]]) -> list[np.ndarray]:
        """Inference-only embeddings for (utterance, channel) pairs, batched by length and cached under ``tag``."""
        todo = [(u, c) for u, c in pairs if (tag, _ukey(u), c) not in self._emb]
        groups: dict[int, list] = defaultdict(list)
        for u, c in todo:
            groups[self.features(u, c).shape[0]].append((u, c))
        for T in sorted(groups):
            items = groups[T]
            x = np.stack([self.features(u, c) for u, c in items])
            e = encoder.encode(x).data
            for (u, c), row in zip(items, e):
                self._emb[(tag, _ukey(u), c)] = row
        return [self._emb[(tag, _ukey(u), c)] for u, c in pairs]

    def drop(self, tag: str) -> None:
        for k in [k for k in self._emb if k[0] == tag]:
            del self._emb[k]


def _by_length(items: Sequence, length: Callable) -> list[list]:
    groups: dict[int, list] = defaultdict(list)
    for it in items:
        groups[length(it)].append(it)
    return [groups[k] for k in sorted(groups)]


def _require_channels(corpus: ParallelCorpus, names: Iterable[str]) -> None:
    have = set(corpus.channel_names)
    for n in names:
        if n not in have:
            raise ConfigError(f"channel {n!r} not in corpus channels {sorted(have)}")


def _check_finite_grads(params: dict[str, Tensor], step: int) -> None:
    for k, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericalError(f"step {step}: non-finite gradient in {k}")


# ---------------------------------------------------------------------------
# teacher pre-training


@dataclass(frozen=True)
class PretrainConfig:
    """Multi-condition frame-classification pre-training of the teacher on both languages.

    Every pre-training utterance passes through its own random channel
    (``random_channel``), so the resulting encoder is moderately robust the
    way a large pre-trained model is. None of the eight evaluation profiles
    is used here.
    """
    n_utterances: int = 2000
    steps: int = 500
    batch_size: int = 16
    peak_lr: float = 3e-3
    warmup_fraction: float = 0.10
    weight_decay: float = 0.01
    min_tokens: int = 1
    max_tokens: int = 6
    snr_range: tuple[float, float] = (5.0, 35.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1 or self.steps < 1 or self.batch_size < 1:
            raise ConfigError("pre-training sizes must be positive")


def pretrain_pool(cfg: PretrainConfig, synth: SynthConfig = SynthConfig(),
                  feat: FeatureConfig = FeatureConfig()) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(language, features, frame labels); silence is labelled with the language's blank index."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    pool = []
    for i in range(cfg.n_utterances):
        lang = LANGUAGES[i % len(LANGUAGES)]
        n = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        toks = [int(t) for t in rng.integers(0, vocab_size(lang), size=n)]
        useed = int(rng.integers(0, 2**31 - 1))
        w = apply_channel(synth_utterance(toks, lang, useed, synth), random_channel(rng, f"aug{i}", cfg.snr_range), useed)
        f = log_mel(w, feat).frames
        pool.append((lang, f, frame_labels(toks, lang, useed, f.shape[0], feat.hop_len, feat.win_len,
                                           vocab_size(lang), synth)))
    return pool


def pretrain_encoder(enc_cfg: EncoderConfig = EncoderConfig(), cfg: PretrainConfig = PretrainConfig(),
                     synth: SynthConfig = SynthConfig(), feat: FeatureConfig = FeatureConfig(),
                     log: list | None = None) -> tuple[PretrainedEncoder, dict[str, CTCHead]]:
    """Train a fresh encoder with one frame classifier per language.

    Returns the frozen encoder and the classifiers. A classifier has the same
    shape as a CTC head (silence in the blank column), so a copy of it is the
    natural starting point for that language's decoders.
    """
    pool = pretrain_pool(cfg, synth, feat)
    groups = _by_length(pool, lambda item: (LANGUAGES.index(item[0]), item[1].shape[0]))
    enc = PretrainedEncoder(enc_cfg, cfg.seed)
    heads = {l: CTCHead(enc_cfg.model_dim, vocab_size(l), cfg.seed + k) for k, l in enumerate(LANGUAGES)}
    params = list(enc.params.values()) + [p for h in heads.values() for p in (h.w, h.b)]
    for p in params:
        p.requires_grad = True
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    sched = LRSchedule(cfg.steps, cfg.peak_lr, cfg.warmup_fraction)
    rng = np.random.default_rng([cfg.seed, 17])
    for step in range(1, cfg.steps + 1):
        g = groups[int(rng.integers(len(groups)))]
        idx = rng.choice(len(g), size=min(cfg.batch_size, len(g)), replace=False)
        x = np.stack([g[i][1] for i in idx])
        opt.zero_grad()
        with Tape() as tape:
            logits = heads[g[0][0]].logits(encoder_forward(enc.params, None, x, enc_cfg))
            loss = cross_entropy(logits, np.stack([g[i][2] for i in idx]))
        if not loss.is_finite():
            raise NumericalError(f"pre-training step {step}: loss is not finite")
        backward(loss, tape)
        lr = lr_at(step, sched)
        opt.step(lr)
        if log is not None:
            log.append(LogRecord(step, lr, loss.item()))
    for p in params:
        p.requires_grad = False
        p.grad = None
    return enc, heads


# ---------------------------------------------------------------------------
# adapter alignment


def adapter_channels(corpus: ParallelCorpus, cfg: TrainConfig) -> list[str]:
    """Channels fed to the student: everything not excluded, clean channel included."""
    if cfg.clean_channel not in corpus.channel_names:
        raise ConfigError(f"clean channel {cfg.clean_channel!r} missing from corpus")
    chans = [c for c in corpus.channel_names if c not in cfg.excluded_channels]
    if len(chans) < 2:
        raise ConfigError("adapter training needs the clean channel and at least one other channel")
    return chans


def alignment_mse(teacher: PretrainedEncoder, student, corpus: ParallelCorpus, channels: Sequence[str],
                  clean: str, bank: FeatureBank) -> float:
    """Element-averaged MSE between teacher(clean) and student(channel) over all (utterance, channel) pairs."""
    sq, n = 0.0, 0
    for group in _by_length(list(corpus), lambda u: bank.features(u, clean).shape[0]):
        ref = teacher.encode(np.stack([bank.features(u, clean) for u in group])).data
        for c in channels:
            out = student.encode(np.stack([bank.features(u, c) for u in group])).data
            d = out - ref
            sq += float((d * d).sum())
            n += d.size
    return sq / n


def sample_channels(utts: Sequence[Utterance], channels: Sequence[str], seed: int, epoch: int) -> list[str]:
    rng = np.random.default_rng([seed, epoch, 7])
    return [channels[i] for i in rng.integers(0, len(channels), size=len(utts))]


def adapter_batch_loss(teacher, student, batch: Sequence[tuple[Utterance, str]], clean: str,
                       bank: FeatureBank) -> Tensor:
    """MSE averaged over every element of the batch, built from equal-length sub-batches."""
    groups = _by_length(batch, lambda uc: bank.features(uc[0], clean).shape[0])
    total = sum(len(g) * bank.features(g[0][0], clean).shape[0] for g in groups)
    loss = None
    for g in groups:
        ref = teacher.encode(np.stack([bank.features(u, clean) for u, _ in g]))
        out = student.encode(np.stack([bank.features(u, c) for u, c in g]))
        w = len(g) * ref.shape[1] / total
        part = mse_loss(out, ref) * w
        loss = part if loss is None else loss + part
    return loss


def train_adapters(train: ParallelCorpus, dev: ParallelCorpus, teacher: PretrainedEncoder,
                   student: AdapterEncoder, cfg: TrainConfig, bank: FeatureBank | None = None,
                   log: list | None = None) -> ModelCheckpoint:
    """Align student embeddings of any channel with teacher embeddings of the clean channel.

    Only adapter weights are updated. Each epoch every training utterance is
    paired with one channel drawn uniformly from the non-excluded channels
    (clean included). The student is left holding the best-on-dev weights,
    which are also returned as a checkpoint.
    """
    bank = bank or FeatureBank()
    chans = adapter_channels(train, cfg)
    _require_channels(dev, chans)
    utts = list(train)
    if not utts:
        raise ConfigError("empty training split")
    steps_per_epoch = math.ceil(len(utts) / cfg.batch_size)
    sched = LRSchedule(cfg.epochs * steps_per_epoch, cfg.peak_lr, cfg.warmup_fraction)
    wd = 0.0 if cfg.weight_decay is None else cfg.weight_decay
    for t in student.base.values():
        t.requires_grad = False
    student.set_trainable(True)
    opt = AdamW(list(student.adapters.values()), weight_decay=wd)
    rng = np.random.default_rng([cfg.seed, 11])

    best = (alignment_mse(teacher, student, dev, chans, cfg.clean_channel, bank), 0,
            {k: v.data.copy() for k, v in student.adapters.items()})
    if log is not None:
        log.append(LogRecord(0, lr_at(0, sched), float("nan"), best[0]))
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(utts))
        picks = sample_channels([utts[i] for i in order], chans, cfg.seed, epoch)
        pairs = [(utts[i], c) for i, c in zip(order, picks)]
        for start in range(0, len(pairs), cfg.batch_size):
            step += 1
            batch = pairs[start:start + cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                loss = adapter_batch_loss(teacher, student, batch, cfg.clean_channel, bank)
            if not loss.is_finite():
                raise NumericalError(f"step {step}: adapter loss is not finite")
            backward(loss, tape)
            _check_finite_grads(student.adapters, step)
            lr = lr_at(step, sched)
            opt.step(lr)
            dev_val = None
            if (cfg.dev_interval and step % cfg.dev_interval == 0) or \
                    (not cfg.dev_interval and start + cfg.batch_size >= len(pairs)):
                dev_val = alignment_mse(teacher, student, dev, chans, cfg.clean_channel, bank)
                if dev_val < best[0]:
                    best = (dev_val, step, {k: v.data.copy() for k, v in student.adapters.items()})
            if log is not None:
                log.append(LogRecord(step, lr, loss.item(), dev_val))
    for k, v in student.adapters.items():
        v.data = best[2][k].copy()
        v.grad = None
    student.set_trainable(False)
    return to_checkpoint(student, regime="adapters", best_dev=best[0], best_step=best[1], seed=cfg.seed,
                         total_steps=sched.total_steps)


# ---------------------------------------------------------------------------
# decoder training (vanilla and DEFA)


def expand_channel_set(spec: str | Sequence[str], all_channels: Sequence[str]) -> list[str]:
    """Resolve a channel-set expression.

    ``"~X"`` means every channel except X; ``"A,B"`` or a list names
    channels directly.
    """
    if isinstance(spec, str):
        spec = spec.strip()
        if spec.startswith("~"):
            x = spec[1:]
            if x not in all_channels:
                raise ConfigError(f"unknown channel {x!r} in exclusion {spec!r}")
            return [c for c in all_channels if c != x]
        names = [s.strip() for s in spec.split(",") if s.strip()]
    else:
        names = list(spec)
    for n in names:
        if n not in all_channels:
            raise ConfigError(f"unknown channel {n!r}")
    if not names:
        raise ConfigError("empty channel set")
    return names


def decode_cer(encoder, tag: str, head: CTCHead, corpus: ParallelCorpus, channels: Sequence[str],
               bank: FeatureBank) -> float:
    pairs = [(u, c) for u in corpus for c in channels]
    embs = bank.embeddings(encoder, tag, pairs)
    refs = [list(u.tokens) for u, _ in pairs]
    hyps = [greedy_decode(head.logits(e).data) for e in embs]
    return cer(refs, hyps)


def _head_loop(encoder, tag: str, train: ParallelCorpus, dev: ParallelCorpus, channels: Sequence[str],
               head: CTCHead, cfg: TrainConfig, bank: FeatureBank, log: list | None, regime: str
               ) -> ModelCheckpoint:
    _require_channels(train, channels)
    _require_channels(dev, channels)
    pairs = [(u, c) for u in train for c in channels]
    if not pairs:
        raise ConfigError("empty decoder training subset")
    before = params_snapshot(encoder)
    embs = dict(zip([(_ukey(u), c) for u, c in pairs], bank.embeddings(encoder, tag, pairs)))
    steps_per_epoch = math.ceil(len(pairs) / cfg.batch_size)
    sched = LRSchedule(cfg.epochs * steps_per_epoch, cfg.peak_lr, cfg.warmup_fraction)
    wd = 0.01 if cfg.weight_decay is None else cfg.weight_decay
    head.w.requires_grad = head.b.requires_grad = True
    opt = AdamW([head.w, head.b], weight_decay=wd)
    rng = np.random.default_rng([cfg.seed, 13])

    best = (decode_cer(encoder, tag, head, dev, channels, bank), 0, head.state_dict())
    if log is not None:
        log.append(LogRecord(0, lr_at(0, sched), float("nan"), best[0]))
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.batch_size):
            step += 1
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                loss = None
                for g in _by_length(batch, lambda uc: embs[(_ukey(uc[0]), uc[1])].shape[0]):
                    e = Tensor(np.stack([embs[(_ukey(u), c)] for u, c in g]))
                    part = ctc_loss(head.logits(e), [list(u.tokens) for u, _ in g]) * (len(g) / len(batch))
                    loss = part if loss is None else loss + part
            if not loss.is_finite():
                raise NumericalError(f"step {step}: CTC loss is not finite")
            backward(loss, tape)
            _check_finite_grads(head.parameters(), step)
            lr = lr_at(step, sched)
            opt.step(lr)
            dev_val = None
            if (cfg.dev_interval and step % cfg.dev_interval == 0) or \
                    (not cfg.dev_interval and start + cfg.batch_size >= len(order)):
                dev_val = decode_cer(encoder, tag, head, dev, channels, bank)
                if dev_val < best[0]:
                    best = (dev_val, step, head.state_dict())
            if log is not None:
                log.append(LogRecord(step, lr, loss.item(), dev_val))
    head.load_state_dict(best[2])
    if params_snapshot(encoder) != before:
        raise ContractError("encoder weights changed during decoder training")
    return to_checkpoint(head, regime=regime, best_dev=best[0], best_step=best[1], seed=cfg.seed,
                         channels=list(channels), total_steps=sched.total_steps)


def params_snapshot(encoder) -> str:
    from .model import params_checksum
    return params_checksum(encoder.parameters())


def train_decoder(train: ParallelCorpus, dev: ParallelCorpus, channels: Sequence[str],
                  encoder: PretrainedEncoder, head: CTCHead, cfg: TrainConfig,
                  bank: FeatureBank | None = None, log: list | None = None) -> ModelCheckpoint:
    """Fit a CTC head on frozen teacher embeddings of the given channels; best dev CER wins."""
    return _head_loop(encoder, "pre:" + encoder.checksum()[:16], train, dev, channels, head, cfg, bank or FeatureBank(), log, "decoder")


def defa_finetune(head: CTCHead, enc_adp: AdapterEncoder, train: ParallelCorpus, dev: ParallelCorpus,
                  channels: Sequence[str], cfg: TrainConfig, bank: FeatureBank | None = None,
                  log: list | None = None) -> ModelCheckpoint:
    """Continue training ``head`` (in place) on embeddings from the frozen adapter encoder."""
    enc_adp.set_trainable(False)
    tag = "adp:" + enc_adp.adapter_checksum()[:16]
    return _head_loop(enc_adp, tag, train, dev, channels, head, cfg, bank or FeatureBank(), log, "defa")
