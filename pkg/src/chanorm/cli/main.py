"""``chanorm`` entry point.

Exit codes: 0 success, 2 configuration or usage error (including missing
prerequisite checkpoints), 3 filesystem error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import __version__
from ..errors import ChanormError, ConfigError, NumericalError
from .config import ExperimentConfig, from_dict, merge, read_tree
from .presets import PRESETS, preset_names
from .runner import (MANIFEST, Corpora, RunManifest, RunResult, Workspace, evaluate, export_corpus,
                     load_adapters, load_head, load_teacher, run_pipeline, stage_adapters, stage_decoder,
                     stage_defa, stage_teacher)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
REGIMES = ("teacher", "adapters", "decoder", "defa")

log = logging.getLogger("chanorm")


def resolve_config(config_path=None, out_dir=None, seed: int | None = None, base: dict | None = None
                   ) -> ExperimentConfig:
    """Config tree from ``--config``, else from the run manifest already in ``out_dir``."""
    tree = dict(base or {})
    if config_path is not None:
        tree = merge(tree, read_tree(config_path))
    elif base is None:
        mpath = Path(out_dir) / MANIFEST if out_dir else None
        if mpath is None or not mpath.exists():
            raise ConfigError("--config is required (no run manifest in the output directory)")
        tree = RunManifest.from_json(mpath.read_text(encoding="utf-8")).config
    if seed is not None:
        tree["seed"] = seed
    return from_dict(tree)


def cmd_corpus(config_path, out_dir, seed: int | None = None) -> list[Path]:
    """Generate the corpora named by the config and write WAVs plus JSON-lines manifests."""
    cfg = resolve_config(config_path, out_dir, seed)
    ws = Workspace(out_dir, cfg)
    return export_corpus(ws, Corpora(cfg))


def cmd_train(regime: str, config_path, out_dir, seed: int | None = None, channels: str | None = None,
              teacher_path=None, adapters_path=None, decoder_path=None) -> list[Path]:
    """Run one training regime; returns the checkpoints written."""
    from ..training import FeatureBank

    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; choose from {', '.join(REGIMES)}")
    cfg = resolve_config(config_path, out_dir, seed)
    ws = Workspace(out_dir, cfg)
    if regime == "teacher":
        stage_teacher(ws)
        return [ws.root / "checkpoints" / "teacher.cnck"]
    corpora, bank = Corpora(cfg), FeatureBank()
    teacher, heads = load_teacher(ws, teacher_path)
    if regime == "adapters":
        stage_adapters(ws, teacher, corpora, bank)
        return [ws.root / "checkpoints" / "adapters.cnck"]
    sets = [channels] if channels else cfg.decoder_sets()
    if not sets:
        raise ConfigError("experiments: no decoder channel set given (use --channels)")
    for expr in sets:
        cfg.channel_set(expr)
    out = []
    if regime == "decoder":
        for expr in sets:
            stage_decoder(ws, teacher, heads, expr, corpora, bank)
            out.append(ws.root / "checkpoints" / f"decoder_{_slug(expr)}.cnck")
        return out
    student = load_adapters(ws, teacher, adapters_path)
    for expr in sets:
        head = load_head(ws, "decoder", expr, teacher, decoder_path)
        stage_defa(ws, teacher, student, head, expr, corpora, bank)
        out.append(ws.root / "checkpoints" / f"defa_{_slug(expr)}.cnck")
    return out


def _slug(expr):
    from .runner import slug
    return slug(expr)


def cmd_eval(config_path, out_dir, seed: int | None = None, checkpoints=None):
    """Evaluate every configured experiment from checkpoints already on disk."""
    from ..training import FeatureBank

    cfg = resolve_config(config_path, out_dir, seed)
    ws = Workspace(out_dir, cfg)
    ck = Path(checkpoints) if checkpoints else ws.root / "checkpoints"
    teacher, _ = load_teacher(ws, ck / "teacher.cnck")
    student = load_adapters(ws, teacher, ck / "adapters.cnck") if cfg.needs_adapters else None
    decoders = {e: load_head(ws, "decoder", e, teacher, ck / f"decoder_{_slug(e)}.cnck") for e in cfg.decoder_sets()}
    defa = {e.train: load_head(ws, "defa", e.train, teacher, ck / f"defa_{_slug(e.train)}.cnck")
            for e in cfg.experiments if e.method == "DEFA"}
    return evaluate(ws, teacher, student, decoders, defa, Corpora(cfg), FeatureBank())


def cmd_reproduce(preset: str | None, out_dir, config_path=None, seed: int | None = None, manifest=None,
                  cache_dir=None) -> RunResult:
    """Run a named preset (optionally overridden by ``config_path``), a bare config, or a run manifest."""
    if manifest is not None:
        m = RunManifest.from_json(Path(manifest).read_text(encoding="utf-8"))
        cfg = resolve_config(config_path, out_dir, seed, base=m.config)
        return run_pipeline(cfg, out_dir, m.preset, cache_dir)
    if preset is None and config_path is not None:
        return run_pipeline(resolve_config(config_path, None, seed, base={}), out_dir, None, cache_dir)
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; available presets: {', '.join(preset_names())}")
    cfg = resolve_config(config_path, out_dir, seed, base=PRESETS[preset])
    return run_pipeline(cfg, out_dir, preset, cache_dir)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--out-dir", type=Path, default=Path("chanorm-run"), help="output directory")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    p = argparse.ArgumentParser(prog="chanorm", description="Adapter-based channel normalisation experiments.")
    p.add_argument("--version", action="version", version=f"chanorm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("corpus", parents=[common], help="generate and export the parallel corpus")

    t = sub.add_parser("train", parents=[common], help="run one training regime")
    t.add_argument("regime", help=f"one of {', '.join(REGIMES)}")
    t.add_argument("--channels", help="decoder channel set, e.g. COND or ~WCAM (default: all in the config)")
    t.add_argument("--teacher", type=Path, help="teacher checkpoint (default: OUT/checkpoints/teacher.cnck)")
    t.add_argument("--adapters", type=Path, help="adapter checkpoint for defa")
    t.add_argument("--decoder", type=Path, help="decoder checkpoint for defa")

    e = sub.add_parser("eval", parents=[common], help="write CER, improvement, hierarchy and heatmap reports")
    e.add_argument("--checkpoints", type=Path, help="checkpoint directory (default: OUT/checkpoints)")

    r = sub.add_parser("reproduce", parents=[common], help="run a preset end to end")
    r.add_argument("preset", nargs="?", help=f"one of {', '.join(preset_names())}")
    r.add_argument("--manifest", type=Path, help="replay the config recorded in a run manifest")
    r.add_argument("--cache-dir", type=Path, help="share trained stages between runs")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        if args.command == "corpus":
            paths = cmd_corpus(args.config, args.out_dir, args.seed)
            if not args.quiet:
                print("\n".join(str(p) for p in paths))
        elif args.command == "train":
            paths = cmd_train(args.regime, args.config, args.out_dir, args.seed, args.channels, args.teacher,
                              args.adapters, args.decoder)
            if not args.quiet:
                print("\n".join(str(p) for p in paths))
        elif args.command == "eval":
            cmd_eval(args.config, args.out_dir, args.seed, args.checkpoints)
            if not args.quiet:
                print(args.out_dir / "reports")
        else:
            if args.preset is None and args.manifest is None and args.config is None:
                raise ConfigError(f"give a preset ({', '.join(preset_names())}), --config or --manifest")
            cmd_reproduce(args.preset, args.out_dir, args.config, args.seed, args.manifest, args.cache_dir)
            if not args.quiet:
                print(args.out_dir / "reports")
    except NumericalError as e:
        print(f"chanorm: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ChanormError as e:
        print(f"chanorm: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"chanorm: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
