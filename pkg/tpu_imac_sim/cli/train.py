"""Two-step mixed-precision training from the command line.

Step 1 trains every layer in full precision, step 2 freezes the
convolutions and retrains the FC block with ternary weights. Both
accuracies are printed and written into the export manifest.
"""

import argparse
import sys
import typing as t
from dataclasses import replace
from pathlib import Path

from tpu_imac_sim.cli.common import EXIT_OK, check_topology, guarded, stdout
from tpu_imac_sim.cli.config import load_run_config
from tpu_imac_sim.defaults import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS_STEP1,
    DEFAULT_EPOCHS_STEP2,
    DEFAULT_LEARNING_RATE,
)
from tpu_imac_sim.exceptions import ConfigError
from tpu_imac_sim.helper import msg_box
from tpu_imac_sim.logger import logger
from tpu_imac_sim.mptrain import (
    Backend,
    TrainHyper,
    evaluate,
    export_weights,
    load_mnist,
    train_step1,
    train_step2,
)
from tpu_imac_sim.sched import Mode
from tpu_imac_sim.topology import resolve_topology

parser = argparse.ArgumentParser(description="Train a CNN for the TPU+IMAC accelerator")
parser.add_argument(
    "--dataset",
    choices=("mnist",),
    default="mnist",
    help="Dataset format of the image and label files",
)
parser.add_argument("--images", type=Path, required=True, help="Training images (IDX)")
parser.add_argument("--labels", type=Path, required=True, help="Training labels (IDX)")
parser.add_argument(
    "--test-images",
    type=Path,
    default=None,
    help="Test images; accuracies are measured on the training set without them",
)
parser.add_argument("--test-labels", type=Path, default=None, help="Test labels (IDX)")
parser.add_argument(
    "-t",
    "--topology",
    type=str,
    default="lenet_mnist",
    help="Topology CSV file or the name of a bundled topology",
)
parser.add_argument("--epochs-step1", type=int, default=DEFAULT_EPOCHS_STEP1)
parser.add_argument("--epochs-step2", type=int, default=DEFAULT_EPOCHS_STEP2)
parser.add_argument("--lr-step1", type=float, default=DEFAULT_LEARNING_RATE)
parser.add_argument("--lr-step2", type=float, default=DEFAULT_LEARNING_RATE)
parser.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
parser.add_argument(
    "-s",
    "--seed",
    type=int,
    default=None,
    help="Training seed, defaults to the seed of the run configuration",
)
parser.add_argument(
    "-c",
    "--config",
    type=Path,
    default=None,
    help="Run configuration file, defaults to $TPUIMAC_CONFIG",
)
parser.add_argument(
    "-o",
    "--out",
    type=Path,
    required=True,
    help="Directory for the exported weights and manifest",
)


@guarded
def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    args = parser.parse_args(argv)
    if (args.test_images is None) != (args.test_labels is None):
        raise ConfigError("--test-images and --test-labels go together")
    cfg = load_run_config(args.config, Mode.HYBRID)
    hyper1 = TrainHyper(
        learning_rate=args.lr_step1,
        epochs=args.epochs_step1,
        batch_size=args.batch_size,
        seed=cfg.seed if args.seed is None else args.seed,
        neuron_slope=cfg.imac.neuron_slope,
    )
    hyper2 = replace(hyper1, learning_rate=args.lr_step2, epochs=args.epochs_step2)

    topology = resolve_topology(args.topology)
    check_topology(topology, True, cfg.systolic.pes)
    train = load_mnist(args.images, args.labels)
    test = train
    if args.test_images is not None:
        test = load_mnist(args.test_images, args.test_labels)
    else:
        logger.warning("No test set given, accuracies are measured on the training set")
    logger.info(f"Training {topology.name} on {len(train)} samples")

    step1 = train_step1(topology, train, hyper1)
    accuracy1 = evaluate(step1, test)
    step2 = train_step2(step1, train, hyper2)
    accuracy2 = evaluate(step2, test, xbar_cfg=cfg.imac)
    lines = [
        f"step 1 (full precision): {accuracy1:.2%}",
        f"step 2 (ternary FC):     {accuracy2:.2%}",
    ]
    if cfg.imac.variation_sigma > 0:
        analog = evaluate(step2, test, Backend.ANALOG, cfg.imac, seed=cfg.seed)
        lines.append(f"step 2 on IMAC (sigma {cfg.imac.variation_sigma}): {analog:.2%}")

    export_weights(step2, args.out, accuracy_step1=accuracy1, accuracy_step2=accuracy2)
    stdout.print(msg_box("\n".join(lines), title=f"{topology.name} accuracy"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
