import json
import math

import numpy as np
import pytest

from chanorm.dsp import (LANGUAGES, ChannelProfile, CorpusSpec, FeatureConfig, SynthConfig, Waveform, apply_channel,
                         build_parallel_corpus, default_channels, feature_distance, frame_labels,
                         fundamental, harmonic_weights, log_mel, mel_center_frequencies, read_corpus, read_wav,
                         sound_unit, speech_activity_mask, synth_utterance, token_segments, vocab_size, write_corpus, write_wav)
from chanorm.errors import ConfigError, ContractError

FC = FeatureConfig()


def small_spec(**kw):
    kw.setdefault("n_train", 4)
    kw.setdefault("n_dev", 3)
    kw.setdefault("n_test", 3)
    return CorpusSpec(**kw)


@pytest.fixture(scope="module")
def corpus():
    return build_parallel_corpus(small_spec(), seed=5)


# synthesis


def test_synth_is_deterministic():
    a = synth_utterance([1, 2, 3], "LangA", 9)
    b = synth_utterance([1, 2, 3], "LangA", 9)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, synth_utterance([1, 2, 3], "LangA", 10).samples)


def test_duration_formula():
    cfg = SynthConfig(token_ms=200, gap_ms=50, pad_ms=100)
    w = synth_utterance([0, 4, 7], "LangA", 1, cfg)
    assert len(w) == 16000 * (2 * 0.1 + 3 * 0.2 + 2 * 0.05)
    assert w.duration == pytest.approx(0.9)


def test_synth_rejects_empty_and_out_of_vocab():
    with pytest.raises(ContractError):
        synth_utterance([], "LangA", 0)
    with pytest.raises(ContractError):
        synth_utterance([vocab_size("LangA")], "LangA", 0)


@pytest.mark.parametrize("token", range(8))
def test_dominant_dft_peak_is_the_fundamental(token):
    # silence the room tone so the segment holds only the token's harmonics
    cfg = SynthConfig(room_db=-math.inf)
    w = synth_utterance([token], "LangA", 100 + token, cfg)
    (a, b), = token_segments([token], "LangA", 100 + token, cfg)
    seg = w.samples[a:b] * np.hanning(b - a)
    n = 1 << 16
    spec = np.abs(np.fft.rfft(seg, n))
    peak = np.argmax(spec) * cfg.sample_rate / n
    f0 = fundamental(token, "LangA")
    # the per-token detune moves the pitch by at most pitch_jitter
    assert abs(peak - f0) <= cfg.pitch_jitter * f0 + 2.0


def test_languages_share_most_units():
    a = {sound_unit(k, "LangA") for k in range(vocab_size("LangA"))}
    b = {sound_unit(k, "LangB") for k in range(vocab_size("LangB"))}
    assert len(a) == len(b) == 8 and len(a & b) == 6
    # a shared unit sounds the same in both languages
    assert fundamental(1, "LangB") == fundamental(2, "LangA")
    assert np.array_equal(harmonic_weights(1, "LangB"), harmonic_weights(2, "LangA"))


def test_harmonic_weights_fundamental_largest():
    for lang in LANGUAGES:
        for k in range(vocab_size(lang)):
            w = harmonic_weights(k, lang)
            assert w[0] == w.max() == 1.0


def test_frame_labels_follow_segments():
    cfg = SynthConfig()
    toks = [3, 5]
    w = synth_utterance(toks, "LangA", 4, cfg)
    T = FC.n_frames(len(w))
    lab = frame_labels(toks, "LangA", 4, T, FC.hop_len, FC.win_len, silence=8)
    assert lab[0] == 8 and lab[-1] == 8
    assert set(np.unique(lab)) == {3, 5, 8}
    # tokens appear in order
    seq = [int(x) for i, x in enumerate(lab) if x != 8 and (i == 0 or lab[i - 1] != x)]
    assert seq == toks


# channels


def test_identity_channel_is_bitwise():
    w = synth_utterance([1, 2], "LangA", 3)
    out = apply_channel(w, ChannelProfile("COND"), 3)
    assert np.array_equal(out.samples, w.samples)


def test_gain_only_profile_halves():
    # -6.02 dB is only approximately one half; 20*log10(0.5) is exact
    w = synth_utterance([1, 2], "LangA", 3)
    out = apply_channel(w, ChannelProfile("HALF", gain_db=20 * math.log10(0.5)), 3)
    np.testing.assert_allclose(out.samples, w.samples / 2, rtol=0, atol=1e-9)
    approx = apply_channel(w, ChannelProfile("HALF", gain_db=-6.02), 3)
    np.testing.assert_allclose(approx.samples, w.samples / 2, rtol=0, atol=1e-4)


@pytest.mark.parametrize("snr", [0.0, 5.0, 12.5, 30.0])
def test_realised_snr(snr):
    w = synth_utterance([1, 2, 3], "LangA", 8)
    prof = ChannelProfile("N", noise_snr_db=snr)
    out = apply_channel(w, prof, 8)
    noise = out.samples - w.samples
    measured = 10 * np.log10(np.mean(w.samples ** 2) / np.mean(noise ** 2))
    assert abs(measured - snr) < 0.5


def test_channel_noise_independent_across_channels():
    w = synth_utterance([1], "LangA", 2)
    a = apply_channel(w, ChannelProfile("A", noise_snr_db=10), 2).samples - w.samples
    b = apply_channel(w, ChannelProfile("B", noise_snr_db=10), 2).samples - w.samples
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1


def test_default_channels_roster():
    chans = default_channels()
    assert [c.name for c in chans] == ["COND", "LAV", "PCM", "IPH", "ADR", "ZM-X", "ZM-Y", "WCAM"]
    assert chans[0].is_identity
    assert [c.severity_rank for c in chans] == list(range(8))


def test_outputs_bounded_and_aligned(corpus):
    for u in corpus["test"]:
        clean = u.waveforms["COND"].samples
        for name, w in u.waveforms.items():
            assert len(w) == len(clean)
            assert np.all(np.isfinite(w.samples)) and np.max(np.abs(w.samples)) <= 1.0
            if name == "COND":
                continue
            # cross-correlation peak at lag 0 within a small window
            lags = range(-20, 21)
            xc = [np.dot(np.roll(w.samples, k), clean) for k in lags]
            assert list(lags)[int(np.argmax(xc))] == 0


def test_channel_profile_validation():
    with pytest.raises(ConfigError):
        ChannelProfile("X", fir_taps=(0.5, 0.5))
    with pytest.raises(ConfigError):
        ChannelProfile("X", clip_threshold=0.0)
    with pytest.raises(ConfigError):
        ChannelProfile("X", fir_taps=())


def test_profile_dict_roundtrip():
    for c in default_channels():
        assert ChannelProfile.from_dict(json.loads(json.dumps(c.to_dict()))) == c


# corpus


def test_corpus_counts_and_disjoint_ids():
    spec = small_spec(n_train=4, n_dev=3, n_test=3)
    c = build_parallel_corpus(spec, 1)
    assert sum(len(u.waveforms) for s in c.values() for u in s) == 80
    ids = [u.id for s in c.values() for u in s]
    assert len(ids) == len(set(ids)) == 10


def test_corpus_deterministic(corpus):
    again = build_parallel_corpus(small_spec(), seed=5)
    for split in corpus:
        for a, b in zip(corpus[split], again[split]):
            assert a.id == b.id and a.tokens == b.tokens
            for name in a.waveforms:
                assert np.array_equal(a.waveforms[name].samples, b.waveforms[name].samples)


def test_channel_variants_recompute(corpus):
    spec = small_spec()
    u = corpus["dev"].utterances[1]
    clean = synth_utterance(u.tokens, u.language_id, u.seed, spec.synth)
    for prof in spec.channels:
        assert np.array_equal(apply_channel(clean, prof, u.seed).samples, u.waveforms[prof.name].samples)


def test_duplicate_channel_names_rejected():
    chans = default_channels()
    with pytest.raises(ConfigError, match="duplicate"):
        build_parallel_corpus(small_spec(channels=chans + [chans[1]]), 0)


def test_corpus_tokens_in_vocab():
    c = build_parallel_corpus(small_spec(language_id="LangB", min_tokens=2, max_tokens=2), 3)
    for u in c["train"]:
        assert len(u.tokens) == 2 and all(0 <= t < vocab_size("LangB") for t in u.tokens)


def test_severity_monotone(corpus):
    d = feature_distance(corpus["test"], "COND")
    ranked = sorted(default_channels(), key=lambda c: c.severity_rank)
    vals = [d[c.name] for c in ranked]
    assert vals[0] == 0.0
    assert all(a < b for a, b in zip(vals, vals[1:]))


# features


def test_log_mel_frame_count_and_floor():
    w = Waveform(np.zeros(16000))
    m = log_mel(w, FC)
    assert m.T == 1 + (16000 - FC.win_len) // FC.hop_len
    assert m.F == 26
    assert np.all(m.frames == math.log(FC.log_floor))


def test_log_mel_too_short():
    with pytest.raises(ContractError):
        log_mel(Waveform(np.zeros(FC.win_len - 1)), FC)


@pytest.mark.parametrize("band", [3, 10, 18])
def test_tone_at_mel_centre_peaks_in_its_bin(band):
    f = mel_center_frequencies(FC)[band]
    t = np.arange(8000) / 16000
    m = log_mel(Waveform(0.5 * np.sin(2 * np.pi * f * t)), FC)
    assert np.all(np.argmax(m.frames, axis=1) == band)


def test_values_respect_floor(corpus):
    u = corpus["train"].utterances[0]
    assert np.all(log_mel(u.waveforms["WCAM"], FC).frames >= math.log(FC.log_floor))


def test_vad_silence_and_tone():
    assert not speech_activity_mask(Waveform(np.zeros(8000)), FC).any()
    t = np.arange(8000) / 16000
    assert speech_activity_mask(Waveform(np.sin(2 * np.pi * 440 * t)), FC).all()


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_vad_tracks_token_segments(seed):
    toks = [seed % 8, (seed + 3) % 8, (seed + 5) % 8]
    w = synth_utterance(toks, "LangA", seed)
    mask = speech_activity_mask(w, FC)
    truth = frame_labels(toks, "LangA", seed, len(mask), FC.hop_len, FC.win_len, silence=-1) >= 0
    edges = np.flatnonzero(np.diff(truth.astype(int))) + 0.5
    for t in np.flatnonzero(mask != truth):
        # disagreements only within one frame of a segment boundary
        assert np.min(np.abs(edges - t)) <= 1.5


# persistence


def test_wav_roundtrip(tmp_path):
    w = synth_utterance([1, 2], "LangA", 0)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000 and len(back) == len(w)
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32767


def test_corpus_export_manifest(tmp_path, corpus):
    manifest = write_corpus(corpus, tmp_path)
    lines = [json.loads(x) for x in manifest.read_text().splitlines()]
    assert len(lines) == 10
    assert list(lines[0]) == ["id", "language", "tokens", "split", "seed", "paths"]
    for rec in lines:
        assert set(rec["paths"]) == set(corpus["train"].channel_names)
        for rel in rec["paths"].values():
            assert (tmp_path / rel).exists()
    back = read_corpus(tmp_path)
    assert [u.id for u in back["test"]] == [u.id for u in corpus["test"]]
    assert back["train"].channel_names == corpus["train"].channel_names
