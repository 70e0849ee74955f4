"""``puad`` command-line entry point.

    puad <generate|train|eval|sweep|contour> --config PATH [--set key=value]... [--out DIR]

Exit codes: 0 success, 2 configuration/contract error, 3 I/O or format
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import load_config
from .data import load_split, save_split
from .errors import ContractError, FormatError, NumericError, PuadError
from .evaluate import alpha_sweep, contamination_sweep, contour_grid, report, score_dataset
from .experiment import dataset_for, pools_for
from .models import load_model, save_model
from .trainer import fit

log = logging.getLogger("puad")

MANIFEST = "manifest.json"


def _hash_inputs(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths if p):
        path = Path(p)
        files = sorted(path.rglob("*")) if path.is_dir() else [path]
        for f in files:
            if f.is_file() and not f.name.endswith(MANIFEST):
                h.update(f.name.encode())
                h.update(f.read_bytes())
    return h.hexdigest()


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def manifest_path(out: Path, is_dir: bool) -> Path:
    """``DIR/manifest.json`` for directory outputs, ``FILE.manifest.json`` next to single files."""
    return out / MANIFEST if is_dir else out.with_name(f"{out.name}.{MANIFEST}")


def write_manifest(path: Path, command: str, cfg, inputs, outputs, started: float):
    manifest = {
        "command": command,
        "config": cfg.to_dict() if cfg is not None else {},
        "seed": cfg.seed if cfg is not None else None,
        "input_hash": _hash_inputs(inputs),
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.perf_counter() - started, 3),
    }
    write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(value, flag):
    if value is None:
        raise ContractError(f"{flag} is required for this command")
    return value


# ------------------------------------------------------------ commands

def cmd_generate(args, cfg, started):
    out = Path(args.out or ".")
    data = dataset_for(cfg)
    paths = save_split(data, out)
    write_atomic(out / "config.txt", cfg.to_text())
    write_manifest(manifest_path(out, True), "generate", cfg, [args.config], [*paths, out / "config.txt"], started)
    print(f"wrote {len(paths)} split files to {out}")


def cmd_train(args, cfg, started):
    out = Path(args.out or ".")
    data_dir = _require(args.data, "--data")
    data = load_split(data_dir)
    train_cfg, model_cfg = cfg.train_config(), cfg.model_config()
    if train_cfg.loss_kind.needs_anomalies and len(data.anomalies) == 0:
        raise ContractError(f"{train_cfg.loss} needs labeled anomalies but {data_dir} has none")
    model, history = fit(data, train_cfg, model_cfg)
    out.mkdir(parents=True, exist_ok=True)
    model_path, hist_path = out / "model.txt", out / "history.csv"
    save_model(model, model_path)
    history.to_csv(hist_path)
    write_manifest(manifest_path(out, True), "train", cfg, [args.config, data_dir], [model_path, hist_path], started)
    print(f"trained {train_cfg.loss} for {history.stopped_epoch} epochs (best {history.best_epoch}); model at {model_path}")


def cmd_eval(args, cfg, started):
    model = load_model(_require(args.model, "--model"))
    data = load_split(_require(args.data, "--data"))
    rep = report(model, data.test_only(), seed=cfg.seed if cfg else None)
    scores = score_dataset(model, data.test_points)
    if np.ptp(scores) == 0:
        log.warning("all test scores are identical; AUROC values are degenerate (0.5)")
    out = Path(args.out or "report.txt")
    write_atomic(out, rep.to_text())
    write_manifest(manifest_path(out, False), "eval", cfg, [args.model, args.data, args.config], [out], started)
    sys.stdout.write(rep.to_text())


def cmd_sweep(args, cfg, started):
    out = Path(args.out or ".")
    train_cfg, model_cfg = cfg.train_config(), cfg.model_config()
    seeds = list(range(cfg.seed, cfg.seed + cfg.sweep_seeds))
    if args.kind == "alpha":
        data = load_split(args.data) if args.data else dataset_for(cfg)
        result = alpha_sweep(cfg.sweep_values, train_cfg, data, seeds, model_cfg, workers=cfg.workers)
    else:
        pools = pools_for(cfg, max(int(c) for c in cfg.sweep_counts))
        result = contamination_sweep(
            cfg.sweep_counts, train_cfg, pools, cfg.gen_config(), seeds, model_cfg, workers=cfg.workers
        )
    out.mkdir(parents=True, exist_ok=True)
    summary, cells = out / "sweep.csv", out / "sweep_cells.csv"
    result.to_csv(summary)
    result.cells_to_csv(cells)
    write_manifest(manifest_path(out, True), f"sweep-{args.kind}", cfg, [args.config, args.data], [summary, cells], started)
    failed = sum(c.report is None for c in result.cells)
    print(f"{len(result.cells)} cells ({failed} failed); summary at {summary}")


def cmd_contour(args, cfg, started):
    model = load_model(_require(args.model, "--model"))
    grid = contour_grid(model, cfg.contour_x, cfg.contour_y, cfg.contour_resolution)
    out = Path(args.out or "contour.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(out)
    write_manifest(manifest_path(out, False), "contour", cfg, [args.model, args.config], [out], started)
    print(f"wrote {len(grid.xs)}x{len(grid.ys)} grid to {out}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "contour": cmd_contour,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="puad", description="Deep positive-unlabeled anomaly detection")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory (file for eval/contour)")
    p.add_argument("--data", help="directory written by 'puad generate'")
    p.add_argument("--model", help="model file written by 'puad train'")
    p.add_argument("--kind", choices=("alpha", "contamination"), default="alpha", help="sweep kind")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command](args, cfg, started)
    except NumericError as exc:
        print(f"puad: numeric failure: {exc}", file=sys.stderr)
        return 4
    except FormatError as exc:
        print(f"puad: bad file: {exc}", file=sys.stderr)
        return 3
    except PuadError as exc:
        print(f"puad: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"puad: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
