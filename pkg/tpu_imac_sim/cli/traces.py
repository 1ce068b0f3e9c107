import argparse
import sys
import typing as t
from pathlib import Path

from tpu_imac_sim.cli.common import EXIT_OK, check_topology, guarded, stdout
from tpu_imac_sim.cli.config import load_run_config
from tpu_imac_sim.helper import staged_dir
from tpu_imac_sim.logger import logger
from tpu_imac_sim.sched import Mode, Unit, plan
from tpu_imac_sim.systolic import check_regions, write_traces
from tpu_imac_sim.topology import resolve_topology

parser = argparse.ArgumentParser(
    description="Write the memory access traces of every systolic-array layer"
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
    help="In tpu-imac mode the FC layers run on the IMAC engine and get no trace",
)
parser.add_argument(
    "-o",
    "--out",
    type=Path,
    required=True,
    help="Directory for the trace files",
)


@guarded
def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    args = parser.parse_args(argv)
    mode = Mode.from_cli(args.mode)
    cfg = load_run_config(args.config, mode)
    topology = resolve_topology(args.topology)
    check_topology(topology, mode is Mode.HYBRID, cfg.systolic.pes)
    execution = plan(topology, mode)

    layers = [
        layer for layer in topology.layers if execution.unit_of(layer.name) is Unit.TPU
    ]
    # Fail before the first file if any layer overruns its address region
    for layer in layers:
        check_regions(layer, cfg.systolic)
    with staged_dir(args.out) as stage:
        for layer in layers:
            write_traces(layer, cfg.systolic, stage)
    skipped = len(topology.layers) - len(layers)
    if skipped:
        logger.info(f"Skipped {skipped} layers that do not run on the systolic array")
    stdout.print(f"{len(layers)} trace files in {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
