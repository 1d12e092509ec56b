"""Synthetic parallel multi-channel speech and log-mel features.

A "token" is rendered as a fixed-length harmonic tone whose pitch and
harmonic weights depend on the token index and the language. An utterance is
a run of such tones separated by short silences and surrounded by padding::

    n_samples = 2 * pad + n_tokens * token_len + (n_tokens - 1) * gap_len

with the three lengths given in milliseconds by :class:`SynthConfig` and
converted to samples at the configured rate. Inside its slot, each tone is
shifted by a random onset of up to ``onset_jitter_ms`` and has its amplitude
scaled by a random factor in ``[1 - amp_jitter, 1 + amp_jitter]``; its
active length is always ``token_ms - onset_jitter_ms``.

Recording channels are simulated with :func:`apply_channel` as
``clip(gain * (fir * x) + noise, threshold)``, where the FIR is linear-phase
and its group delay is trimmed so every channel stays sample-aligned with
the source.
"""
from __future__ import annotations

import json
import math
import wave
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .errors import ConfigError, ContractError

LANGUAGES = ("LangA", "LangB")

# Sound units: (fundamental in Hz, emphasised harmonic). A token is a label for
# one unit. The languages are related, so LangB reuses six LangA units under
# different labels and adds two of its own (units 8 and 9).
SOUNDS = (
    (140.0, 2), (175.0, 3), (220.0, 4), (275.0, 5), (345.0, 2), (430.0, 3), (540.0, 4), (675.0, 5),
    (155.0, 4), (750.0, 3),
)
INVENTORY = {
    "LangA": (0, 1, 2, 3, 4, 5, 6, 7),
    "LangB": (8, 2, 4, 1, 6, 3, 5, 9),
}
N_HARMONICS = 6


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = 16000
    token_ms: float = 200.0
    gap_ms: float = 50.0
    pad_ms: float = 100.0
    onset_jitter_ms: float = 10.0
    ramp_ms: float = 10.0
    amplitude: float = 0.25
    amp_jitter: float = 0.2
    pitch_jitter: float = 0.12  # per-token detune, uniform within +-12%
    room_db: float = -25.0  # background hiss relative to a full token; -inf for digital silence

    def samples(self, ms: float) -> int:
        return int(round(ms * self.sample_rate / 1000.0))

    def n_samples(self, n_tokens: int) -> int:
        return (2 * self.samples(self.pad_ms) + n_tokens * self.samples(self.token_ms)
                + (n_tokens - 1) * self.samples(self.gap_ms))


def sound_unit(token: int, language_id: str) -> int:
    return INVENTORY[language_id][token]


def fundamental(token: int, language_id: str) -> float:
    return SOUNDS[sound_unit(token, language_id)][0]


def harmonic_weights(token: int, language_id: str) -> np.ndarray:
    """Relative amplitudes of harmonics 1..N_HARMONICS; the fundamental is always the largest."""
    w = 1.0 / np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    # a token-specific emphasised harmonic gives each token its own colour
    peak = SOUNDS[sound_unit(token, language_id)][1]
    w[peak - 1] = max(w[peak - 1], 0.7)
    w[0] = 1.0
    return w


def vocab_size(language_id: str) -> int:
    return len(INVENTORY[language_id])


def _plan(tokens: Sequence[int], language_id: str, seed: int, cfg: SynthConfig):
    if len(tokens) == 0:
        raise ContractError("cannot synthesise an empty token sequence")
    if language_id not in INVENTORY:
        raise ContractError(f"unknown language {language_id!r}")
    V = vocab_size(language_id)
    for t in tokens:
        if not 0 <= int(t) < V:
            raise ContractError(f"token {t} outside vocabulary of size {V}")
    rng = np.random.default_rng(seed)
    pad, tok, gap = cfg.samples(cfg.pad_ms), cfg.samples(cfg.token_ms), cfg.samples(cfg.gap_ms)
    jit = cfg.samples(cfg.onset_jitter_ms)
    active = tok - jit
    plan = []
    for i, t in enumerate(tokens):
        slot = pad + i * (tok + gap)
        onset = int(rng.integers(0, jit + 1)) if jit > 0 else 0
        amp = cfg.amplitude * (1.0 + cfg.amp_jitter * (2.0 * rng.random() - 1.0))
        phase = rng.random(N_HARMONICS) * 2 * np.pi
        detune = 1.0 + cfg.pitch_jitter * (2.0 * rng.random() - 1.0) if cfg.pitch_jitter else 1.0
        plan.append((int(t), slot + onset, active, amp, phase, detune))
    return plan


def token_segments(tokens: Sequence[int], language_id: str, seed: int,
                   cfg: SynthConfig = SynthConfig()) -> list[tuple[int, int]]:
    """Sample ranges ``[start, stop)`` where each token's tone is sounding."""
    return [(start, start + n) for _, start, n, *_ in _plan(tokens, language_id, seed, cfg)]


def synth_utterance(tokens: Sequence[int], language_id: str, seed: int,
                    cfg: SynthConfig = SynthConfig()) -> Waveform:
    """Render a token sequence as a clean waveform; deterministic in all arguments."""
    plan = _plan(tokens, language_id, seed, cfg)
    out = np.zeros(cfg.n_samples(len(tokens)))
    sr = cfg.sample_rate
    ramp = cfg.samples(cfg.ramp_ms)
    for token, start, n, amp, phase, detune in plan:
        t = np.arange(n) / sr
        f0 = fundamental(token, language_id) * detune
        w = harmonic_weights(token, language_id)
        tone = np.zeros(n)
        for h in range(N_HARMONICS):
            if f0 * (h + 1) < sr / 2:
                tone += w[h] * np.sin(2 * np.pi * f0 * (h + 1) * t + phase[h])
        tone *= amp / w.sum()
        env = np.ones(n)
        if ramp > 0:
            r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            env[:ramp] = r
            env[n - ramp:] = r[::-1]
        out[start:start + n] = tone * env
    if cfg.room_db > -math.inf:
        room = np.random.default_rng([seed, 1]).standard_normal(out.shape[0])
        out += room * (cfg.amplitude / math.sqrt(2.0)) * 10.0 ** (cfg.room_db / 20.0)
    return Waveform(out, sr)


def frame_labels(tokens: Sequence[int], language_id: str, seed: int, n_frames: int, hop: int, win: int,
                 silence: int, cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    """Per-frame targets: the token sounding at each frame centre, else ``silence``."""
    centre = np.arange(n_frames) * hop + win // 2
    out = np.full(n_frames, silence, dtype=np.int64)
    for tok, (a, b) in zip(tokens, token_segments(tokens, language_id, seed, cfg)):
        out[(centre >= a) & (centre < b)] = int(tok)
    return out


# ---------------------------------------------------------------------------
# channels


@dataclass(frozen=True)
class ChannelProfile:
    """One simulated recording channel. ``noise_snr_db = inf`` means no noise."""

    name: str
    fir_taps: tuple[float, ...] = (1.0,)
    noise_snr_db: float = math.inf
    gain_db: float = 0.0
    clip_threshold: float = 1.0
    severity_rank: int = 0

    def __post_init__(self):
        taps = tuple(float(x) for x in np.ravel(self.fir_taps))
        object.__setattr__(self, "fir_taps", taps)
        if len(taps) == 0:
            raise ConfigError(f"channel {self.name}: fir_taps must be non-empty")
        if len(taps) % 2 == 0:
            raise ConfigError(f"channel {self.name}: fir_taps needs odd length for integer group delay")
        if not 0.0 < self.clip_threshold <= 1.0:
            raise ConfigError(f"channel {self.name}: clip_threshold must lie in (0, 1]")

    @property
    def delay(self) -> int:
        return (len(self.fir_taps) - 1) // 2

    @property
    def is_identity(self) -> bool:
        return (self.fir_taps == (1.0,) and math.isinf(self.noise_snr_db)
                and self.gain_db == 0.0 and self.clip_threshold == 1.0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fir_taps": list(self.fir_taps),
            "noise_snr_db": None if math.isinf(self.noise_snr_db) else self.noise_snr_db,
            "gain_db": self.gain_db,
            "clip_threshold": self.clip_threshold,
            "severity_rank": self.severity_rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelProfile":
        snr = d.get("noise_snr_db")
        return cls(
            name=str(d["name"]),
            fir_taps=tuple(d.get("fir_taps", (1.0,))),
            noise_snr_db=math.inf if snr is None else float(snr),
            gain_db=float(d.get("gain_db", 0.0)),
            clip_threshold=float(d.get("clip_threshold", 1.0)),
            severity_rank=int(d.get("severity_rank", 0)),
        )


def band_taps(lo: float | None, hi: float | None, numtaps: int = 31, fs: int = 16000) -> tuple[float, ...]:
    if lo and hi:
        taps = signal.firwin(numtaps, [lo, hi], pass_zero=False, fs=fs)
    elif hi:
        taps = signal.firwin(numtaps, hi, fs=fs)
    else:
        taps = signal.firwin(numtaps, lo, pass_zero=False, fs=fs)
    return tuple(taps)


def default_channels() -> list[ChannelProfile]:
    """Eight profiles named after the HAT roster, ordered cleanest to harshest.

    Noise is the main severity lever; band limits and gains are mild so a
    channel mostly loses information rather than just shifting it.
    """
    return [
        ChannelProfile("COND", severity_rank=0),
        ChannelProfile("LAV", band_taps(None, 7000), noise_snr_db=8.0, gain_db=-2.0, severity_rank=1),
        ChannelProfile("PCM", band_taps(60, 6500), noise_snr_db=6.5, gain_db=-1.0, severity_rank=2),
        ChannelProfile("IPH", band_taps(100, 6000), noise_snr_db=5.5, severity_rank=3),
        ChannelProfile("ADR", band_taps(150, 5500), noise_snr_db=4.5, severity_rank=4),
        ChannelProfile("ZM-X", band_taps(None, 5000), noise_snr_db=3.5, gain_db=-1.0, severity_rank=5),
        ChannelProfile("ZM-Y", band_taps(200, 4500), noise_snr_db=2.0, gain_db=1.0, severity_rank=6),
        ChannelProfile("WCAM", band_taps(300, 3800), noise_snr_db=0.0, gain_db=3.0,
                       clip_threshold=0.3, severity_rank=7),
    ]


def random_channel(rng: np.random.Generator, name: str, snr_range=(-8.0, 30.0)) -> ChannelProfile:
    """A random channel for multi-condition pre-training (about one in five is clean)."""
    if rng.random() < 0.2:
        return ChannelProfile(name)
    lo = float(rng.choice([0.0, 0.0, 60.0, 120.0, 200.0, 300.0]))
    hi = float(rng.choice([0.0, 7000.0, 5500.0, 4500.0, 3800.0, 3200.0]))
    taps = (1.0,) if lo == 0 and hi == 0 else band_taps(lo or None, hi or None)
    return ChannelProfile(name, taps, noise_snr_db=float(rng.uniform(*snr_range)),
                          gain_db=float(rng.uniform(-5.0, 5.0)))


def channel_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def apply_channel(w: Waveform, profile: ChannelProfile, seed: int) -> Waveform:
    """Pass a waveform through a simulated channel; output has the input's length.

    Noise is Gaussian, drawn from ``(seed, profile.name)`` and scaled so the
    realised signal-to-noise ratio over the whole utterance equals
    ``noise_snr_db`` exactly. A silent input gets no noise.
    """
    if profile.is_identity:
        return Waveform(w.samples.copy(), w.sample_rate)
    x = w.samples
    n = x.shape[0]
    if profile.fir_taps != (1.0,):
        y = np.convolve(x, np.asarray(profile.fir_taps))[profile.delay:profile.delay + n]
    else:
        y = x.copy()
    if profile.gain_db != 0.0:
        y = y * 10.0 ** (profile.gain_db / 20.0)
    if not math.isinf(profile.noise_snr_db):
        p_sig = float(np.mean(y * y))
        if p_sig > 0.0:
            noise = np.random.default_rng(channel_seed(seed, profile.name)).standard_normal(n)
            noise *= math.sqrt(p_sig / 10.0 ** (profile.noise_snr_db / 10.0) / float(np.mean(noise * noise)))
            y = y + noise
    t = min(profile.clip_threshold, 1.0)
    return Waveform(np.clip(y, -t, t), w.sample_rate)


# ---------------------------------------------------------------------------
# corpus


@dataclass
class Utterance:
    id: str
    tokens: tuple[int, ...]
    language_id: str
    seed: int
    waveforms: dict[str, Waveform] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tokens:
            raise ContractError(f"utterance {self.id} has no tokens")
        lengths = {len(w) for w in self.waveforms.values()}
        if len(lengths) > 1:
            raise ContractError(f"utterance {self.id}: channel waveforms differ in length {sorted(lengths)}")


@dataclass
class ParallelCorpus:
    utterances: list[Utterance]
    split: str
    channel_set: list[ChannelProfile]

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channel_set]

    @property
    def language_id(self) -> str:
        return self.utterances[0].language_id if self.utterances else "LangA"

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


@dataclass
class CorpusSpec:
    channels: list[ChannelProfile] = field(default_factory=default_channels)
    n_train: int = 240
    n_dev: int = 40
    n_test: int = 60
    min_tokens: int = 3
    max_tokens: int = 5
    language_id: str = "LangA"
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        names = [c.name for c in self.channels]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate channel names: {dupes}")
        if not self.channels:
            raise ConfigError("corpus needs at least one channel")
        if self.language_id not in LANGUAGES:
            raise ConfigError(f"language_id must be one of {LANGUAGES}, got {self.language_id!r}")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigError("token range must satisfy 1 <= min_tokens <= max_tokens")
        for k in ("n_train", "n_dev", "n_test"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be non-negative")


SPLITS = ("train", "dev", "test")


def build_parallel_corpus(spec: CorpusSpec, seed: int) -> dict[str, ParallelCorpus]:
    """Generate train/dev/test splits; every channel derives from one clean source."""
    spec.validate()
    V = vocab_size(spec.language_id)
    root = np.random.SeedSequence([int(seed), LANGUAGES.index(spec.language_id)])
    rng = np.random.default_rng(root)
    out: dict[str, ParallelCorpus] = {}
    counts = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    for split in SPLITS:
        utts = []
        for i in range(counts[split]):
            n_tok = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
            tokens = tuple(int(t) for t in rng.integers(0, V, size=n_tok))
            useed = int(rng.integers(0, 2**31 - 1))
            clean = synth_utterance(tokens, spec.language_id, useed, spec.synth)
            waves = {ch.name: apply_channel(clean, ch, useed) for ch in spec.channels}
            uid = f"{spec.language_id}-{split}-{i:05d}"
            utts.append(Utterance(uid, tokens, spec.language_id, useed, waves))
        out[split] = ParallelCorpus(utts, split, list(spec.channels))
    return out


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 26
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-3
    # speech activity detection
    vad_margin_db: float = 6.0
    vad_range_db: float = 10.0
    vad_abs_floor: float = 1e-10

    @property
    def win_len(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000.0))

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_len) // self.hop_len


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, F)
    frame_hop_ms: float = 10.0

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    fmax = cfg.fmax or cfg.sample_rate / 2
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    return pts[1:-1]


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters with unit peak on HTK-mel spaced centres; shape (n_mels, n_fft//2+1)."""
    fmax = cfg.fmax or cfg.sample_rate / 2
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    fb = np.zeros((cfg.n_mels, freqs.size))
    for m in range(cfg.n_mels):
        lo, c, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / (c - lo)
        down = (hi - freqs) / (hi - c)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def _frames(x: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    if x.shape[0] < cfg.win_len:
        raise ContractError(f"waveform of {x.shape[0]} samples is shorter than one {cfg.win_len}-sample window")
    return sliding_window_view(x, cfg.win_len)[:: cfg.hop_len]


def power_spectrogram(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    fr = _frames(w.samples, cfg) * signal.get_window("hann", cfg.win_len, fftbins=True)
    spec = np.fft.rfft(fr, n=cfg.n_fft, axis=-1)
    return spec.real**2 + spec.imag**2


def log_mel(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Hann-windowed STFT power -> mel filterbank -> natural log with a floor."""
    mel = power_spectrogram(w, cfg) @ mel_filterbank(cfg).T
    return FeatureMatrix(np.log(np.maximum(mel, cfg.log_floor)), cfg.hop_ms)


def speech_activity_mask(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Per-frame energy detector.

    A frame is active when its mean-square energy clears both
    ``floor + vad_margin_db`` (floor = 10th percentile of frame energies) and
    ``peak - vad_range_db``. Signals without that much dynamic range are
    treated as stationary: all frames are active unless they are silent.
    """
    e = (_frames(w.samples, cfg) ** 2).mean(axis=1)
    loud = e > cfg.vad_abs_floor
    e_db = 10.0 * np.log10(e + 1e-300)
    floor_db = float(np.percentile(e_db, 10))
    peak_db = float(e_db.max())
    if peak_db - floor_db < cfg.vad_margin_db:
        return loud
    thr = max(floor_db + cfg.vad_margin_db, peak_db - cfg.vad_range_db)
    return loud & (e_db >= thr)


# ---------------------------------------------------------------------------
# persistence


def write_wav(path, w: Waveform) -> None:
    """16-bit PCM mono."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.sample_rate))
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ContractError(f"{path}: expected 16-bit mono PCM")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0, sr)


MANIFEST_FIELDS = ("id", "language", "tokens", "split", "seed", "paths")


def write_corpus(splits: dict[str, ParallelCorpus], out_dir) -> Path:
    """Write WAVs under ``out_dir/wav/<channel>/<id>.wav`` and a JSON-lines manifest.

    Each manifest line holds the keys of ``MANIFEST_FIELDS`` in that order;
    ``paths`` maps channel name to a path relative to ``out_dir``. A sidecar
    ``channels.json`` records the channel profiles.
    """
    out_dir = Path(out_dir)
    for ch in next(iter(splits.values())).channel_set:
        (out_dir / "wav" / ch.name).mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for split in SPLITS:
            if split not in splits:
                continue
            for u in splits[split]:
                paths = {}
                for name, w in u.waveforms.items():
                    rel = f"wav/{name}/{u.id}.wav"
                    write_wav(out_dir / rel, w)
                    paths[name] = rel
                rec = {"id": u.id, "language": u.language_id, "tokens": list(u.tokens),
                       "split": split, "seed": u.seed, "paths": paths}
                f.write(json.dumps(rec) + "\n")
    chans = [c.to_dict() for c in next(iter(splits.values())).channel_set]
    (out_dir / "channels.json").write_text(json.dumps(chans, indent=1) + "\n", encoding="utf-8")
    return manifest


def read_corpus(out_dir) -> dict[str, ParallelCorpus]:
    out_dir = Path(out_dir)
    chans = [ChannelProfile.from_dict(d) for d in json.loads((out_dir / "channels.json").read_text())]
    splits: dict[str, list[Utterance]] = {s: [] for s in SPLITS}
    with open(out_dir / "manifest.jsonl", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            waves = {name: read_wav(out_dir / rel) for name, rel in rec["paths"].items()}
            splits[rec["split"]].append(
                Utterance(rec["id"], tuple(rec["tokens"]), rec["language"], int(rec["seed"]), waves))
    return {s: ParallelCorpus(u, s, chans) for s, u in splits.items()}


def feature_distance(corpus: ParallelCorpus, reference: str, cfg: FeatureConfig = FeatureConfig()
                     ) -> dict[str, float]:
    """Mean Frobenius distance between each channel's log-mel and the reference channel's."""
    acc = {c: 0.0 for c in corpus.channel_names}
    for u in corpus:
        ref = log_mel(u.waveforms[reference], cfg).frames
        for c in corpus.channel_names:
            acc[c] += float(np.linalg.norm(log_mel(u.waveforms[c], cfg).frames - ref))
    n = max(len(corpus), 1)
    return {c: v / n for c, v in acc.items()}


def iter_pairs(corpus: ParallelCorpus, channels: Iterable[str]):
    for u in corpus:
        for c in channels:
            yield u, c
