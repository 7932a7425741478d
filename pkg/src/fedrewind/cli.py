"""Command-line front end: run one experiment or an alpha sweep.

Outputs, all atomic (temp file + rename), under --out:

- metrics.csv: one row per evaluated round; columns round, FA, FF, PFA,
  then the full cross-accuracy matrix as acc_i_j
- run.json: config snapshot, final metrics, environment stamp; feeding
  it back via --config reproduces metrics.csv byte for byte
- sweep.csv (with --sweep-alpha): alpha, rewind on/off, final FA
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import os
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import (
    DATASETS,
    REWIND_MODES,
    TOPOLOGIES,
    ExperimentConfig,
    parse_config,
    write_json,
)
from .data import Dataset
from .federation import RunRecord, dataset_from_config, run_experiment

MNIST_DIR_ENV = "FEDREWIND_MNIST_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedrewind",
        description=(
            "Deterministic federated-learning simulator with mid-round "
            "model rewind."
        ),
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--nodes", type=int, metavar="N")
    parser.add_argument("--rounds", type=int, metavar="T")
    parser.add_argument("--epochs", type=int, metavar="E", help="epochs per round")
    parser.add_argument(
        "--lambda",
        dest="rewind_fraction",
        type=float,
        metavar="F",
        help="fraction of the epoch budget spent rewinding (0 to 0.5)",
    )
    parser.add_argument("--alpha", type=float, help="Dirichlet concentration")
    parser.add_argument("--topology", choices=TOPOLOGIES)
    parser.add_argument("--rewind", choices=REWIND_MODES)
    parser.add_argument("--dataset", choices=DATASETS)
    parser.add_argument(
        "--mnist-dir",
        metavar="PATH",
        help=f"directory with IDX files (fallback: ${MNIST_DIR_ENV})",
    )
    parser.add_argument(
        "--subset", type=int, metavar="K", help="cap dataset at K samples"
    )
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument(
        "--sweep-alpha",
        metavar="A1,A2,...",
        help="run a rewind on/off sweep over these alpha values",
    )
    return parser


def _float_cell(value: float) -> str:
    return repr(float(value))


def metrics_csv_text(record: RunRecord) -> str:
    """Render the metric history with full round-trip float precision."""
    n = len(record.points[0].per_node_acc)
    header = ["round", "FA", "FF", "PFA"]
    header += [f"acc_{i}_{j}" for i in range(n) for j in range(n)]
    lines = [",".join(header)]
    for p in record.points:
        cells = [str(p.round), _float_cell(p.fa), _float_cell(p.ff), _float_cell(p.pfa)]
        cells += [_float_cell(v) for row in p.matrix for v in row]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _write_text(text: str, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    tmp.replace(path)


def _nan_to_none(value: Optional[float]) -> Optional[float]:
    if value is None or math.isnan(value):
        return None
    return value


def environment_stamp(record: RunRecord) -> dict:
    return {
        "package_version": record.version,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "wall_time_s": round(record.wall_time, 3),
    }


def run(config: ExperimentConfig, data: Optional[Dataset] = None) -> RunRecord:
    """Execute one experiment and write metrics.csv + run.json."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = run_experiment(config, data=data)
    _write_text(metrics_csv_text(record), out / "metrics.csv")
    final = record.final
    write_json(
        {
            "config": config.to_dict(),
            "final": {
                "round": final.round,
                "fa": final.fa,
                "ff": _nan_to_none(final.ff),
                "pfa": final.pfa,
                "per_node_acc": list(final.per_node_acc),
                "server_acc": _nan_to_none(final.server_acc),
            },
            "environment": environment_stamp(record),
        },
        out / "run.json",
    )
    return record


def sweep_alpha(
    config: ExperimentConfig, alphas: Sequence[float]
) -> list[tuple[float, str, float]]:
    """Final FA for rewind off/on at each alpha, all from one base seed.

    The "on" arm uses the config's rewind mode (or "source" when the
    config has rewind disabled); "off" forces mode none. Writes sweep.csv
    in the config's output directory and returns its rows.
    """
    if not alphas:
        raise ValueError("sweep needs at least one alpha")
    on_mode = config.rewind if config.rewind != "none" else "source"
    on_fraction = (
        config.rewind_fraction if config.rewind_fraction > 0 else 0.2
    )
    data = dataset_from_config(config)
    rows = []
    for alpha in alphas:
        for label, mode, fraction in (
            ("off", "none", config.rewind_fraction),
            ("on", on_mode, on_fraction),
        ):
            cfg = dataclasses.replace(
                config, alpha=alpha, rewind=mode, rewind_fraction=fraction
            )
            record = run_experiment(cfg, data=data)
            rows.append((alpha, label, record.final.fa))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["alpha,rewind,final_fa"]
    lines += [f"{repr(float(a))},{label},{repr(fa)}" for a, label, fa in rows]
    _write_text("\n".join(lines) + "\n", out / "sweep.csv")
    return rows


def _parse_alpha_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"bad --sweep-alpha value {text!r}") from None
    if not values:
        raise ValueError("--sweep-alpha needs at least one value")
    return values


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "nodes": args.nodes,
        "rounds": args.rounds,
        "epochs": args.epochs,
        "rewind_fraction": args.rewind_fraction,
        "alpha": args.alpha,
        "topology": args.topology,
        "rewind": args.rewind,
        "dataset": args.dataset,
        "mnist_dir": args.mnist_dir,
        "subset": args.subset,
        "output_dir": args.out,
    }
    try:
        config = parse_config(args.config, overrides)
        if config.dataset == "mnist" and config.mnist_dir is None:
            env_dir = os.environ.get(MNIST_DIR_ENV)
            if env_dir:
                config = dataclasses.replace(config, mnist_dir=env_dir)
        if args.sweep_alpha:
            rows = sweep_alpha(config, _parse_alpha_list(args.sweep_alpha))
            for alpha, label, fa in rows:
                print(f"alpha={alpha} rewind={label} final_fa={fa:.4f}")
        else:
            record = run(config)
            final = record.final
            ff = "nan" if math.isnan(final.ff) else f"{final.ff:.4f}"
            print(
                f"round={final.round} fa={final.fa:.4f} ff={ff} "
                f"pfa={final.pfa:.4f} out={config.output_dir}"
            )
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
