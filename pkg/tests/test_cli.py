import json
import subprocess
import sys

import pytest
import yaml

from chanorm.cli import main
from chanorm.cli.config import from_dict, load_config
from chanorm.training import LRSchedule, lr_at, parse_log

TINY = {
    "name": "tiny",
    "seed": 3,
    "corpus": {
        "n_train": 6, "n_dev": 3, "n_test": 4, "min_tokens": 2, "max_tokens": 3,
        "channels": [
            {"name": "COND"},
            {"name": "NOISY", "band": [None, 5000], "noise_snr_db": 5},
            {"name": "BAD", "band": [300, 3800], "noise_snr_db": 0, "gain_db": 3, "clip_threshold": 0.3},
        ],
    },
    "encoder": {"num_blocks": 1, "model_dim": 16, "num_heads": 2, "ffn_dim": 32, "adapter_bottleneck": 4},
    "pretrain": {"n_utterances": 20, "steps": 4, "batch_size": 4},
    "adapters": {"epochs": 1, "batch_size": 4, "peak_lr": 3e-3, "excluded_channels": ["BAD"]},
    "decoder": {"epochs": 1, "batch_size": 4, "peak_lr": 2e-3},
    "defa": {"epochs": 1, "batch_size": 4},
    "experiments": [
        {"method": "Van_pre", "train": "COND"},
        {"method": "Van_adp", "train": "COND"},
        {"method": "DEFA", "train": "COND"},
        {"method": "Van_pre", "train": "~BAD"},
        {"method": "Van_adp", "train": "~BAD", "test": "NOISY,BAD"},
    ],
    "heatmaps": [{"channel": "NOISY", "images": 1}],
    "hierarchy": True,
}


def write_cfg(path, tree=TINY, **changes):
    tree = json.loads(json.dumps(tree))
    for dotted, value in changes.items():
        node = tree
        *parents, leaf = dotted.split("__")
        for k in parents:
            node = node.setdefault(k, {})
        node[leaf] = value
    path.write_text(yaml.safe_dump(tree))
    return path


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One full tiny run, shared by the read-only checks below."""
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root / "tiny.yaml")
    out = root / "out"
    assert main(["reproduce", "--config", str(cfg), "--out-dir", str(out), "--quiet"]) == 0
    return out


def test_reproduce_writes_layout(run):
    for rel in ("run_manifest.json", "checkpoints/teacher.cnck", "checkpoints/adapters.cnck",
                "checkpoints/decoder_COND.cnck", "checkpoints/decoder_not-BAD.cnck", "checkpoints/defa_COND.cnck",
                "logs/adapters.tsv", "reports/cer_matrix.csv", "reports/improvement.csv", "reports/summary.csv",
                "reports/hierarchy.csv", "reports/alignment_dev.csv", "reports/heatmap_summary.csv",
                "corpus/LangA/manifest.jsonl"):
        assert (run / rel).exists(), rel
    assert list((run / "reports" / "heatmaps").glob("*.pgm"))


def test_cer_matrix_rows(run):
    lines = (run / "reports" / "cer_matrix.csv").read_text().splitlines()
    assert lines[0] == "model,COND,NOISY,BAD,AVG"
    labels = [ln.split(",")[0] for ln in lines[1:]]
    assert labels == ["Van_pre|COND", "Van_adp|COND", "DEFA|COND", "Van_pre|~BAD", "Van_adp|~BAD"]
    # the last experiment was only tested on two channels
    assert lines[-1].split(",")[1] == ""


@pytest.mark.parametrize("name,peak", [("adapters", 3e-3), ("decoder_COND", 2e-3), ("decoder_not-BAD", 2e-3),
                                       ("defa_COND", 1e-4), ("teacher", 3e-3)])
def test_logged_lr_follows_schedule(run, name, peak):
    recs = parse_log((run / "logs" / f"{name}.tsv").read_text())
    sched = LRSchedule(recs[-1].step, peak)
    assert all(r.lr == lr_at(r.step, sched) for r in recs)


def test_manifest_replay_is_bitwise(run, tmp_path):
    out = tmp_path / "again"
    assert main(["reproduce", "--manifest", str(run / "run_manifest.json"), "--out-dir", str(out), "--quiet"]) == 0
    for csv in sorted((run / "reports").glob("*.csv")):
        assert (out / "reports" / csv.name).read_bytes() == csv.read_bytes(), csv.name
    for ck in sorted((run / "checkpoints").glob("*.cnck")):
        assert (out / "checkpoints" / ck.name).read_bytes() == ck.read_bytes(), ck.name


def test_manifest_records_config_and_checksums(run):
    m = json.loads((run / "run_manifest.json").read_text())
    assert m["kind"] == "run-manifest"
    assert m["config"]["seed"] == 3
    assert "checkpoints/teacher.cnck" in m["artifacts"]


def test_corpus_export_is_stable(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["corpus", "--config", str(cfg), "--out-dir", str(a), "--quiet"]) == 0
    assert main(["corpus", "--config", str(cfg), "--out-dir", str(b), "--quiet"]) == 0
    wavs = sorted(p.relative_to(a) for p in a.rglob("*.wav"))
    assert len(wavs) == (6 + 3 + 4) * 3
    for rel in wavs:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    assert (a / "corpus/LangA/manifest.jsonl").read_bytes() == (b / "corpus/LangA/manifest.jsonl").read_bytes()


def test_stagewise_commands(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", experiments=[{"method": "Van_pre", "train": "COND"},
                                                       {"method": "DEFA", "train": "COND"}], hierarchy=False,
                    heatmaps=[])
    out = str(tmp_path / "o")
    base = ["--config", str(cfg), "--out-dir", out, "--quiet"]
    assert main(["train", "teacher", *base]) == 0
    # DEFA needs the adapters and a decoder first
    assert main(["train", "defa", *base]) == 2
    assert main(["train", "adapters", *base]) == 0
    assert main(["train", "decoder", *base]) == 0
    assert main(["train", "defa", *base]) == 0
    # later commands can find the config through the manifest
    assert main(["eval", "--out-dir", out, "--quiet"]) == 0
    assert (tmp_path / "o" / "reports" / "cer_matrix.csv").exists()


@pytest.mark.parametrize("changes", [
    {"experiments": [{"method": "Van_pre", "train": "NOPE"}]},
    {"experiments": [{"method": "Van_pre", "train": "COND", "test": "ADR"}]},
    {"experiments": [{"method": "Magic", "train": "COND"}]},
    {"corpus__channels": [{"name": "COND"}, {"name": "COND"}]},
    {"adapters__excluded_channels": ["COND"]},
    {"colour": "blue"},
    {"encoder__model_dim": 15},
])
def test_config_errors_exit_2(tmp_path, changes):
    cfg = write_cfg(tmp_path / "bad.yaml", **changes)
    assert main(["reproduce", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--quiet"]) == 2


def test_usage_errors_exit_2(tmp_path):
    assert main(["reproduce", "no-such-preset", "--out-dir", str(tmp_path), "--quiet"]) == 2
    assert main(["train", "nonsense", "--config", str(write_cfg(tmp_path / "c.yaml")), "--out-dir",
                 str(tmp_path / "o")]) == 2
    assert main(["eval", "--out-dir", str(tmp_path / "empty")]) == 2
    assert main(["frobnicate"]) == 2


def test_unknown_preset_lists_choices(tmp_path, capsys):
    main(["reproduce", "no-such-preset", "--out-dir", str(tmp_path)])
    err = capsys.readouterr().err
    assert "hat-main" in err and "tat-crosslang" in err


def test_missing_config_file_exit_3(tmp_path):
    assert main(["corpus", "--config", str(tmp_path / "absent.yaml"), "--out-dir", str(tmp_path / "o")]) == 3


def test_unwritable_out_dir_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path / "c.yaml")
    assert main(["corpus", "--config", str(cfg), "--out-dir", str(blocker / "sub"), "--quiet"]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the overflow is the point
def test_nan_exit_4(tmp_path):
    cfg = write_cfg(tmp_path / "nan.yaml", adapters__peak_lr=1e300)
    assert main(["train", "teacher", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--quiet"]) == 0
    assert main(["train", "adapters", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--quiet"]) == 4


def test_seed_override_changes_corpus(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["corpus", "--config", str(cfg), "--out-dir", str(a), "--quiet"])
    main(["corpus", "--config", str(cfg), "--out-dir", str(b), "--seed", "4", "--quiet"])
    assert (a / "corpus/LangA/manifest.jsonl").read_bytes() != (b / "corpus/LangA/manifest.jsonl").read_bytes()


def test_out_dir_bound_to_its_config(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml")
    other = write_cfg(tmp_path / "d.yaml", seed=9)
    out = str(tmp_path / "o")
    assert main(["corpus", "--config", str(cfg), "--out-dir", out, "--quiet"]) == 0
    assert main(["corpus", "--config", str(other), "--out-dir", out, "--quiet"]) == 2


def test_preset_configs_validate():
    from chanorm.cli.presets import PRESETS

    for name, tree in PRESETS.items():
        cfg = from_dict(tree)
        assert cfg.decoder_sets()


def test_load_config_reads_yaml(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "c.yaml"))
    assert cfg.channel_set("~BAD") == ["COND", "NOISY"]
    assert cfg.fingerprint() == load_config(tmp_path / "c.yaml").fingerprint()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "chanorm", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("chanorm ")


def test_builtin_channel_names_reuse_default_profiles():
    from chanorm.dsp import default_channels

    adr = next(c for c in default_channels() if c.name == "ADR")
    cfg = from_dict(dict(TINY, corpus=dict(TINY["corpus"], channels=[
        "COND", "ADR", {"name": "WCAM", "noise_snr_db": 12}, {"name": "ZM-Y", "band": [None, 4000]}]),
                              adapters=dict(TINY["adapters"], excluded_channels=["WCAM"]),
                              experiments=[{"method": "Van_pre", "train": "COND"}], heatmaps=[], hierarchy=False))
    chans = {c.name: c for c in cfg.corpus.channels}
    assert chans["COND"].is_identity and chans["ADR"] == adr
    assert chans["WCAM"].noise_snr_db == 12 and chans["WCAM"].clip_threshold < 1.0
    assert chans["ZM-Y"].fir_taps != adr.fir_taps and len(chans["ZM-Y"].fir_taps) == 31


def test_unknown_bare_channel_name_rejected(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", corpus__channels=["COND", "MYSTERY"])
    assert main(["corpus", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "--quiet"]) == 2
