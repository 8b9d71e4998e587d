"""Command-line entry point: ``velcomp <command> [flags]``.

Every command writes a ``manifest.json`` next to its outputs recording the
config hash, the seed and component versions.  Failures print a single
JSON line ``{"error": <kind>, "message": <text>}`` to stderr and exit with
a nonzero status.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import pitchcontrol as pc
from .config import ConfigError, RunConfig, dump_config, load_config
from .core_types import Dataset, EventWindow, child_rng
from .diffcore.checkpoint import VERSION as CHECKPOINT_VERSION
from .diffcore.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ingest import IngestError, discover_matches, ingest_matches, load_datasets, read_events, read_tracking, write_outputs
from .models import ARCHS, build_model
from .models.rule import rule_based_velocity
from .synth import generate_match, write_match
from .train_eval import evaluate_rmse, export_velocities, predict, train

log = logging.getLogger("velcomp")

VELOCITY_SOURCES = ("true", "rule", "model")


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2):
        super().__init__(message)
        self.kind = kind
        self.code = code


def versions() -> dict:
    return {
        "velcomp": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "checkpoint_format": CHECKPOINT_VERSION,
    }


def write_manifest(out_dir: Path, command: str, cfg: RunConfig, **fields) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": versions(),
        **fields,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CLIError("io", f"cannot create output directory {out}: {e.strerror}")
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    arch = getattr(args, "arch", None)
    if arch is not None and arch not in ARCHS:
        raise CLIError("unknown_arch", f"unknown arch {arch!r}; valid names: {', '.join(ARCHS)}")
    return cfg.with_overrides(seed=args.seed, arch=arch)


def _datasets(args):
    data = Path(args.data)
    try:
        return load_datasets(data)
    except FileNotFoundError as e:
        raise CLIError("missing_input", f"{e}; run 'velcomp ingest' first")


def _model(cfg: RunConfig, checkpoint):
    spec = cfg.model_spec()
    model = build_model(spec)
    if spec.arch == "rule_based":
        return model, None
    if checkpoint is None:
        raise CLIError("missing_checkpoint", f"arch {spec.arch!r} needs --checkpoint")
    path = Path(checkpoint)
    if not path.exists():
        raise CLIError("missing_checkpoint", f"checkpoint not found: {path}")
    meta = load_checkpoint(path, model)
    stored = meta.get("extra", {}).get("model_spec")
    if stored is not None and stored.get("arch") != spec.arch:
        raise CLIError("checkpoint_mismatch", f"{path} holds arch {stored.get('arch')!r}, not {spec.arch!r}")
    return model, meta


def _test_set(datasets, spec, split: str) -> Dataset:
    return _split(datasets, spec.dataset_kind, split)


def _split(datasets, kind: str, split: str) -> Dataset:
    key = (kind, split)
    if key not in datasets:
        raise CLIError("missing_input", f"dataset {key[0]}_{split} not found")
    return datasets[key]


# ----------------------------------------------------------------------------
# commands


def cmd_synth(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    files = []
    for m in range(cfg.synth.n_matches):
        match = generate_match(cfg.synth, m, cfg.pitch, match_id=m)
        files += sorted(p.name for p in write_match(match, out).values())
    dump_config(cfg, out / "config.yaml")
    write_manifest(out, "synth", cfg, synth=cfg.synth.to_dict(), files=files)
    return {"out": str(out), "matches": cfg.synth.n_matches}


def cmd_ingest(args) -> dict:
    cfg = _config(args)
    src = Path(args.input)
    try:
        found = discover_matches(src)
    except FileNotFoundError as e:
        raise CLIError("missing_input", str(e))
    out = _out_dir(args)

    def load():
        for mid, tr, ev, ro in found:
            yield mid, read_tracking(tr, ro), read_events(ev)

    datasets, manifest = ingest_matches(load(), cfg.ingest, cfg.split_spec(len(found)), cfg.pitch)
    manifest["run"] = {"config_hash": cfg.hash(), "seed": cfg.seed, "versions": versions()}
    write_outputs(datasets, manifest, out)
    return {"out": str(out), "counts": manifest["counts"]}


def cmd_train(args) -> dict:
    cfg = _config(args)
    spec = cfg.model_spec()
    if spec.arch == "rule_based":
        raise CLIError("nothing_to_train", "rule_based has no parameters; use 'velcomp eval --arch rule_based'")
    datasets, data_manifest = _datasets(args)
    out = _out_dir(args)
    res = train(spec, _test_set(datasets, spec, "train"), _test_set(datasets, spec, "val"), cfg.train,
                cfg.pitch, log_path=out / "train_log.csv")
    extra = {"model_spec": json.loads(spec.to_json()), "best_epoch": res.best_epoch,
             "best_val": res.best_val, "data_config_hash": data_manifest.get("config_hash")}
    save_checkpoint(out / "checkpoint.npz", res.model, cfg.hash(), extra)
    write_manifest(out, "train", cfg, arch=spec.arch, best_epoch=res.best_epoch, best_val=res.best_val,
                   epochs=len(res.log), data_config_hash=data_manifest.get("config_hash"),
                   files=["checkpoint.npz", "train_log.csv"])
    return {"out": str(out), "best_epoch": res.best_epoch, "best_val": res.best_val}


def cmd_eval(args) -> dict:
    cfg = _config(args)
    model, _ = _model(cfg, args.checkpoint)
    datasets, data_manifest = _datasets(args)
    out = _out_dir(args)
    test = _test_set(datasets, model.spec, args.split)
    report = evaluate_rmse(model, test, cfg.eval.n_inferences, cfg.seed, cfg.eval.batch_size, cfg.pitch, cfg.rule)
    report.write(out / "eval_report.json")
    report.write_histogram_csv(out / "speed_histogram.csv")
    export_velocities(model, test.samples, out / "velocities.csv", cfg.seed, cfg.pitch)
    write_manifest(out, "eval", cfg, arch=model.spec.arch, split=args.split, rmse=report.rmse,
                   n_events=len(test), data_config_hash=data_manifest.get("config_hash"),
                   files=["eval_report.json", "speed_histogram.csv", "velocities.csv"])
    return {"out": str(out), "rmse": report.rmse}


def _find_sample(test: Dataset, event: int, match: int | None):
    hits = [s for s in test.samples
            if (s.target if isinstance(s, EventWindow) else s).event_index == event
            and (match is None or (s.target if isinstance(s, EventWindow) else s).match_id == match)]
    if not hits:
        where = f" in match {match}" if match is not None else ""
        raise CLIError("unknown_event", f"event {event}{where} not found in the {test.split} split")
    hits.sort(key=lambda s: (s.target if isinstance(s, EventWindow) else s).match_id)
    return hits[0]


def _velocities(cfg: RunConfig, args, frame_sample):
    frame = frame_sample.target if isinstance(frame_sample, EventWindow) else frame_sample
    if args.velocity == "true":
        return frame, frame.player_v
    if args.velocity == "rule":
        return frame, rule_based_velocity(frame, cfg.rule, cfg.pitch)
    model, _ = _model(cfg, args.checkpoint)
    return frame, predict(model, [frame_sample], child_rng(cfg.seed, 5), pitch=cfg.pitch, rule_cfg=cfg.rule)[0]


def _grid_command(args, which: str) -> dict:
    cfg = _config(args)
    datasets, _ = _datasets(args)
    spec = cfg.model_spec()
    kind = spec.dataset_kind if args.velocity == "model" else "D"
    test = _split(datasets, kind, args.split)
    frame, v = _velocities(cfg, args, _find_sample(test, args.event, args.match))
    state = pc.snapshot_from_frame(frame, v)
    out = _out_dir(args)
    info = {"event_index": frame.event_index, "match_id": frame.match_id, "velocity": args.velocity}
    if which == "ppcf":
        grid = pc.ppcf_grid(state, cfg.pitch, cfg.ppcf)
        info["unconverged_cells"] = grid.unconverged
    else:
        res = pc.obso_grid(state, cfg.pitch, cfg.ppcf, cfg.obso.sigma_T, cfg.obso.alpha)
        grid = res.grid
        info["obso_total"] = res.total
    name = f"{which}.csv"
    pc.export_heatmap(grid, out / name, "csv")
    write_manifest(out, which, cfg, **info, files=[name])
    return {"out": str(out), **info}


def cmd_ppcf(args) -> dict:
    return _grid_command(args, "ppcf")


def cmd_obso(args) -> dict:
    return _grid_command(args, "obso")


def cmd_compare(args) -> dict:
    cfg = _config(args)
    model, _ = _model(cfg, args.checkpoint)
    datasets, _ = _datasets(args)
    test = _test_set(datasets, model.spec, args.split)
    samples = list(test.samples)
    if args.limit is not None:
        samples = samples[: args.limit]
    if not samples:
        raise CLIError("empty_input", "no test events to compare")
    frames = [s.target if isinstance(s, EventWindow) else s for s in samples]
    v_model = predict(model, samples, child_rng(cfg.seed, 5), cfg.eval.batch_size, cfg.pitch, cfg.rule)
    v_rule = [rule_based_velocity(f, cfg.rule, cfg.pitch) for f in frames]
    report = pc.compare_completions(frames, list(v_model), v_rule, cfg.pitch, cfg.ppcf,
                                    cfg.obso.sigma_T, cfg.obso.alpha)
    out = _out_dir(args)
    report.write_csv(out / "comparison.csv")
    (out / "comparison_summary.json").write_text(
        json.dumps({"wins": report.wins, "summary": report.summary}, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "compare", cfg, arch=model.spec.arch, wins=report.wins, n_events=len(frames),
                   files=["comparison.csv", "comparison_summary.json"])
    return {"out": str(out), "wins": report.wins}


def cmd_heatmap(args) -> dict:
    cfg = _config(args)
    src = Path(args.grid)
    if not src.exists():
        raise CLIError("missing_input", f"grid file not found: {src}")
    grid = pc.read_grid_csv(src, cfg.pitch)
    out = _out_dir(args)
    stem = src.stem
    files = [pc.export_heatmap(grid, out / f"{stem}.ppm", "ppm", args.cell_px).name]
    write_manifest(out, "heatmap", cfg, source=src.name, files=files)
    return {"out": str(out), "files": files}


# ----------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="velcomp", description="Velocity completion and pitch-control evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help: str):
        sp.add_argument("--config", help="YAML run config (defaults apply to omitted keys)")
        sp.add_argument("--seed", type=int, help="master seed; overrides the config")
        sp.add_argument("--out", required=True, help=out_help)

    def with_model(sp):
        sp.add_argument("--arch", help=f"model architecture, one of: {', '.join(ARCHS)}")
        sp.add_argument("--checkpoint", help="trained checkpoint (.npz); not needed for rule_based")

    def with_data(sp):
        sp.add_argument("--data", required=True, help="directory written by 'velcomp ingest'")
        sp.add_argument("--split", default="test", choices=("train", "val", "test"), help="dataset split")

    sp = sub.add_parser("synth", help="generate synthetic matches as tracking/event CSVs")
    common(sp, "directory for match CSVs")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="join events to tracking and build the datasets")
    common(sp, "directory for dataset files")
    sp.add_argument("--input", required=True, help="directory of match_<id>_*.csv files")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="train a model; writes checkpoint.npz and train_log.csv")
    common(sp, "run directory")
    with_model(sp)
    sp.add_argument("--data", required=True, help="directory written by 'velcomp ingest'")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="test RMSE report for a trained model or the rule baseline")
    common(sp, "report directory")
    with_model(sp)
    with_data(sp)
    sp.set_defaults(func=cmd_eval)

    for name, func, what in (("ppcf", cmd_ppcf, "attacking-team PPCF"), ("obso", cmd_obso, "OBSO")):
        sp = sub.add_parser(name, help=f"{what} grid for one event")
        common(sp, "grid directory")
        with_model(sp)
        with_data(sp)
        sp.add_argument("--event", type=int, required=True, help="event_index of the target event")
        sp.add_argument("--match", type=int, help="match id (default: lowest match containing the event)")
        sp.add_argument("--velocity", default="true", choices=VELOCITY_SOURCES, help="velocity source")
        sp.set_defaults(func=func)

    sp = sub.add_parser("compare", help="per-event Er of rule and model completions against truth")
    common(sp, "report directory")
    with_model(sp)
    with_data(sp)
    sp.add_argument("--limit", type=int, help="only the first N events of the split")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("heatmap", help="render a grid CSV as a PPM image")
    common(sp, "image directory")
    sp.add_argument("--grid", required=True, help="grid CSV written by 'ppcf' or 'obso'")
    sp.add_argument("--cell-px", type=int, default=10, help="pixels per grid cell")
    sp.set_defaults(func=cmd_heatmap)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CLIError as e:
        return _fail(e.kind, str(e), e.code)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except CLIError as e:
        return _fail(e.kind, str(e), e.code)
    except ConfigError as e:
        return _fail("config", str(e), 2)
    except (CheckpointError, IngestError) as e:
        return _fail(type(e).__name__.replace("Error", "").lower() or "input", str(e), 1)
    except FileNotFoundError as e:
        return _fail("missing_input", str(e), 1)
    except OSError as e:
        return _fail("io", str(e), 1)
    except ValueError as e:
        return _fail("invalid", str(e), 1)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
