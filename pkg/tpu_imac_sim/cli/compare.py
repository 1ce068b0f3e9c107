"""Hybrid-versus-baseline comparison across several workloads.

Rows keep the order of ``--topology`` arguments (bundled topologies come
first with ``--all-bundled``), whatever the number of workers.
"""

import argparse
import sys
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from rich.table import Table

from tpu_imac_sim.cli.common import EXIT_OK, check_topology, guarded, stdout
from tpu_imac_sim.cli.config import load_run_config
from tpu_imac_sim.cli.simulate import accuracy_from_weights
from tpu_imac_sim.defaults import BUNDLED_TOPOLOGIES, COMPARISON_FILENAME
from tpu_imac_sim.exceptions import ConfigError
from tpu_imac_sim.helper import atomic_write_text, ensure_dir
from tpu_imac_sim.logger import logger
from tpu_imac_sim.sched import COMPARE_COLUMNS, Mode, compare_row
from tpu_imac_sim.topology import resolve_topology

ACCURACY_COLUMNS = ("accuracy_step1", "accuracy_step2")

parser = argparse.ArgumentParser(
    description="Compare TPU+IMAC against TPU-only execution for several workloads"
)
parser.add_argument(
    "-t",
    "--topology",
    action="append",
    default=[],
    help="Topology CSV file or bundled name, may be repeated",
)
parser.add_argument(
    "--all-bundled",
    action="store_true",
    help="Compare every bundled topology",
)
parser.add_argument(
    "-c",
    "--config",
    type=Path,
    default=None,
    help="Run configuration file, defaults to $TPUIMAC_CONFIG",
)
parser.add_argument(
    "-w",
    "--weights",
    action="append",
    type=Path,
    default=[],
    help="Weight export for the topology in the same position, may be repeated",
)
parser.add_argument(
    "-o",
    "--out",
    type=Path,
    default=None,
    help=f"Directory to write {COMPARISON_FILENAME} to",
)
parser.add_argument(
    "-j",
    "--workers",
    type=int,
    default=1,
    help="Number of workloads simulated in parallel",
)


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def comparison_csv(rows: t.Sequence[dict], columns: t.Sequence[str]) -> str:
    lines = [",".join(columns)]
    lines += [",".join(_format(row.get(c)) for c in columns) for row in rows]
    return "\n".join(lines) + "\n"


@guarded
def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    args = parser.parse_args(argv)
    refs = (list(BUNDLED_TOPOLOGIES) if args.all_bundled else []) + args.topology
    if not refs:
        raise ConfigError("give at least one --topology or --all-bundled")
    if len(args.weights) > len(refs):
        raise ConfigError(f"{len(args.weights)} --weights for {len(refs)} topologies")
    if args.workers < 1:
        raise ConfigError("--workers must be positive")
    cfg = load_run_config(args.config, Mode.HYBRID)

    topologies = [resolve_topology(ref) for ref in refs]
    weights = args.weights + [None] * (len(refs) - len(args.weights))
    accuracies = []
    for topology, path in zip(topologies, weights):
        check_topology(topology, True, cfg.systolic.pes)
        accuracies.append(accuracy_from_weights(path, topology))

    def row_for(item):
        topology, accuracy = item
        return compare_row(
            topology, cfg.systolic, cfg.imac, cfg.aux_cost_per_elem, accuracy
        )

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(row_for, zip(topologies, accuracies)))

    columns = list(COMPARE_COLUMNS)
    if any(accuracies):
        columns += ACCURACY_COLUMNS
    table = Table(title="TPU+IMAC against TPU")
    for column in columns:
        table.add_column(column, justify="left" if column == "model" else "right")
    for row in rows:
        table.add_row(*(_format(row.get(c)) for c in columns))
    stdout.print(table)

    if args.out is not None:
        path = atomic_write_text(
            ensure_dir(args.out) / COMPARISON_FILENAME, comparison_csv(rows, columns)
        )
        logger.info(f"Wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
