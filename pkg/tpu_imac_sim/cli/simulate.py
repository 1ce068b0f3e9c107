import argparse
import sys
import typing as t
from pathlib import Path

from rich.table import Table

from tpu_imac_sim.cli.common import EXIT_OK, check_topology, guarded, stdout
from tpu_imac_sim.cli.config import load_run_config
from tpu_imac_sim.logger import logger
from tpu_imac_sim.mptrain.export import check_manifest, read_manifest
from tpu_imac_sim.sched import Mode, run, summary, write_report
from tpu_imac_sim.topology import resolve_topology

parser = argparse.ArgumentParser(
    description="Simulate a CNN workload on the TPU or on the TPU+IMAC accelerator"
)
parser.add_argument(
    "-t",
    "--topology",
    type=str,
    required=True,
    help="Topology CSV file or the name of a bundled topology",
)
parser.add_argument(
    "-c",
    "--config",
    type=Path,
    default=None,
    help="Run configuration file, defaults to $TPUIMAC_CONFIG",
)
parser.add_argument(
    "-m",
    "--mode",
    choices=("tpu", "tpu-imac"),
    default="tpu-imac",
    help="Run the FC block on the systolic array or on the IMAC engine",
)
parser.add_argument(
    "-o",
    "--out",
    type=Path,
    required=True,
    help="Directory for the CSV and JSON reports",
)
parser.add_argument(
    "-w",
    "--weights",
    type=Path,
    default=None,
    help="Weight export (directory or manifest) whose accuracies go into the report",
)


def accuracy_from_weights(weights: t.Optional[Path], topology) -> t.Optional[dict]:
    if weights is None:
        return None
    manifest = read_manifest(weights)
    check_manifest(manifest, topology)
    return {
        "accuracy_step1": manifest.accuracy_step1,
        "accuracy_step2": manifest.accuracy_step2,
    }


def summary_table(report) -> Table:
    table = Table(title=f"{report.topology} ({report.mode.value})")
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key, value in summary(report).items():
        table.add_row(key, str(value))
    return table


@guarded
def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    args = parser.parse_args(argv)
    mode = Mode.from_cli(args.mode)
    cfg = load_run_config(args.config, mode)
    topology = resolve_topology(args.topology)
    check_topology(topology, mode is Mode.HYBRID, cfg.systolic.pes)
    accuracy = accuracy_from_weights(args.weights, topology)

    report = run(
        topology,
        cfg.systolic,
        cfg.imac,
        mode,
        aux_cost_per_elem=cfg.aux_cost_per_elem,
        accuracy=accuracy,
    )
    write_report(report, args.out)
    stdout.print(summary_table(report))
    logger.debug(f"{topology.name}: {len(report.per_layer)} layers simulated")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
