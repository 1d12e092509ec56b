"""
The whole pipeline, tiny
========================

``chanorm reproduce`` chains teacher pre-training, adapter training, decoder
training, optional DEFA, and evaluation. This script runs it on a config
small enough to finish in about a minute and prints the reports it writes.
The numbers are meaningless at this size. The point is the file layout and
the manifest replay.

The same config can be written to YAML and passed with ``--config``.
"""

import json
import tempfile
from pathlib import Path

import yaml

from chanorm.cli import main

config = {
    "name": "notebook-tiny",
    "seed": 0,
    "corpus": {
        "n_train": 12, "n_dev": 4, "n_test": 6,
        "channels": [{"name": "COND"}, {"name": "ADR"}, {"name": "WCAM"}],
    },
    "encoder": {"num_blocks": 1, "model_dim": 32, "num_heads": 4, "ffn_dim": 64, "adapter_bottleneck": 8},
    "pretrain": {"n_utterances": 48, "steps": 30, "batch_size": 8},
    "adapters": {"epochs": 4, "batch_size": 6, "peak_lr": 3e-3},
    "decoder": {"epochs": 4, "batch_size": 6, "peak_lr": 2e-3},
    "defa": {"epochs": 2, "batch_size": 6},
    "experiments": [
        {"method": "Van_pre", "train": "COND"},
        {"method": "Van_adp", "train": "COND"},
        {"method": "DEFA", "train": "COND"},
        {"method": "Van_pre", "train": "~WCAM"},
        {"method": "Van_adp", "train": "~WCAM"},
    ],
    "heatmaps": [{"channel": "ADR", "images": 1}],
}

work = Path(tempfile.mkdtemp(prefix="chanorm-nb-"))
cfg_path = work / "tiny.yaml"
cfg_path.write_text(yaml.safe_dump(config))
out = work / "run"

code = main(["reproduce", "--config", str(cfg_path), "--out-dir", str(out), "--quiet"])
print("exit code", code)

###############################################################################
# What landed on disk.

for p in sorted(out.rglob("*")):
    if p.is_file() and "corpus" not in p.parts:
        print(f"{p.stat().st_size:9d}  {p.relative_to(out)}")

###############################################################################
# The reports are plain CSV.

for name in ("cer_matrix.csv", "summary.csv", "alignment_dev.csv", "heatmap_summary.csv"):
    print(f"\n-- {name}")
    print((out / "reports" / name).read_text().rstrip())

###############################################################################
# The manifest pins the config and derived seeds. Replaying it into a fresh
# directory gives byte-identical reports.

manifest = json.loads((out / "run_manifest.json").read_text())
print("\nmanifest seeds:", manifest["seeds"])
again = work / "again"
main(["reproduce", "--manifest", str(out / "run_manifest.json"), "--out-dir", str(again), "--quiet"])
same = all((again / "reports" / p.name).read_bytes() == p.read_bytes()
           for p in (out / "reports").glob("*.csv"))
print("replay identical:", same)
print("outputs left in", work)
