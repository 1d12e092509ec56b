"""Named desk-scale experiments, one per analysis.

Each preset is a plain config tree (the same grammar as a YAML config
file), so ``chanorm reproduce NAME --config extra.yaml`` can override any
field.
"""
from __future__ import annotations

from ..dsp import default_channels

CHANNELS = [c.name for c in default_channels()]

BASE = {
    "seed": 0,
    "corpus": {"language": "LangA", "decoder_language": "LangA", "n_train": 240, "n_dev": 40,
               "n_test": 150, "min_tokens": 3, "max_tokens": 5, "write_audio": True, "channels": "default"},
    "adapters": {"epochs": 30, "batch_size": 24, "peak_lr": 3e-3, "clean_channel": "COND",
                 "excluded_channels": ["WCAM"]},
    "decoder": {"epochs": 20, "batch_size": 24, "peak_lr": 2e-3},
    "defa": {"epochs": 20, "batch_size": 24, "peak_lr": 2e-3},
}


def _exps(methods, train_sets):
    return [{"method": m, "train": t} for t in train_sets for m in methods]


PRESETS = {
    # eight single-channel decoders on the frozen teacher, ranked against each other
    "hierarchy": dict(BASE, name="hierarchy", hierarchy=True,
                      experiments=_exps(["Van_pre"], CHANNELS)),
    # plug-in adapters under every single-channel decoder plus the multi-channel one
    "hat-main": dict(BASE, name="hat-main",
                     experiments=_exps(["Van_pre", "Van_adp"], CHANNELS + ["~WCAM"]),
                     heatmaps=[{"channel": "ADR", "images": 2}]),
    "hat-defa": dict(BASE, name="hat-defa",
                     experiments=_exps(["Van_pre", "Van_adp", "DEFA"], ["COND", "~WCAM"])),
    # adapters from LangA under decoders trained on LangB
    "tat-crosslang": dict(BASE, name="tat-crosslang",
                          corpus=dict(BASE["corpus"], decoder_language="LangB"),
                          experiments=_exps(["Van_pre", "Van_adp"], ["COND", "~WCAM"])),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)
