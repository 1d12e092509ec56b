"""
Channels and features
=====================

One synthetic utterance, played through every recording profile.

The parallel corpus keeps every channel sample-aligned with the clean
``COND`` recording, so we can compare them frame by frame. Below we print
how far each channel's log-mel features sit from the clean ones. The
speech-activity mask is shown too, since the heatmaps later split on it.
"""

import numpy as np

from chanorm.dsp import (CorpusSpec, build_parallel_corpus, default_channels, feature_distance, log_mel,
                         speech_activity_mask)

###############################################################################
# A tiny corpus: three test utterances, no training data needed here.

corpus = build_parallel_corpus(CorpusSpec(n_train=1, n_dev=1, n_test=3), seed=0)["test"]
utt = corpus.utterances[0]
print("tokens:", utt.tokens, " samples:", len(utt.waveforms["COND"]))

###############################################################################
# The profiles themselves. Each one is an FIR band filter followed by noise,
# gain and clipping. ``COND`` is the identity.

for ch in default_channels():
    print(f"{ch.name:5s} taps={len(ch.fir_taps):2d} snr={ch.noise_snr_db:5.1f}dB "
          f"gain={ch.gain_db:+.1f}dB clip={ch.clip_threshold}")

###############################################################################
# Distance to the clean features, averaged over the three utterances.
# ``WCAM`` should be far out in front.

dist = feature_distance(corpus, "COND")
for name, d in sorted(dist.items(), key=lambda kv: kv[1]):
    print(f"{name:5s} {d:8.2f} " + "#" * int(d / max(dist.values()) * 40))

###############################################################################
# Speech activity: a crude text plot, one character per 10 ms frame.

for name in ("COND", "ADR", "WCAM"):
    mask = speech_activity_mask(utt.waveforms[name])
    print(f"{name:5s} " + "".join("|" if m else "." for m in mask))

###############################################################################
# Per-band energy difference for the harshest channel, averaged over time.

clean = log_mel(utt.waveforms["COND"]).frames
harsh = log_mel(utt.waveforms["WCAM"]).frames
print("mean |delta log-mel| per band:")
print(np.round(np.abs(harsh - clean).mean(axis=0), 2))
