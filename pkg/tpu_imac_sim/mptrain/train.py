"""Two-step architecture-aware training.

Step 1 trains the whole network in full precision with a tanh at the FC
boundary. Step 2 freezes the convolutional layers, replaces the tanh with
sign binarization, ternarizes the FC weights in the forward pass and
retrains the real-valued shadow weights through straight-through gradients
with sigmoid hidden neurons.
"""

import hashlib
import typing as t
from dataclasses import dataclass, field

import numpy as np

from tpu_imac_sim.defaults import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS_STEP1,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MOMENTUM,
    DEFAULT_NEURON_SLOPE,
    DEFAULT_SEED,
)
from tpu_imac_sim.exceptions import (
    ConfigError,
    StateError,
    TopologyValidationError,
    TrainingDivergedError,
)
from tpu_imac_sim.helper import chunks
from tpu_imac_sim.imac import TernaryMatrix
from tpu_imac_sim.logger import logger
from tpu_imac_sim.mptrain import layers as L
from tpu_imac_sim.mptrain.data import LabeledDataset
from tpu_imac_sim.mptrain.network import (
    Phase,
    boundary_preactivations,
    build_head,
    build_network,
    split_topology,
)
from tpu_imac_sim.mptrain.quantize import sign_binarize, ternarize
from tpu_imac_sim.topology import LayerKind, NetworkTopology, errors, validate


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    epochs: int = DEFAULT_EPOCHS_STEP1
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = DEFAULT_SEED
    neuron_slope: float = DEFAULT_NEURON_SLOPE

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a training seed must be set")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.neuron_slope > 0:
            raise ConfigError("neuron_slope must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


@dataclass
class TrainState:
    """Weights of a network at the end of a training step.

    ``fc_shadow_weights`` are the real-valued ``outputs x inputs`` matrices the
    optimizer updates; ``fc_ternary`` holds their ternarized forward-pass
    counterparts.
    """

    topology: NetworkTopology
    input_shape: t.Tuple[int, int, int]
    conv_weights: t.Dict[str, t.Dict[str, np.ndarray]]
    fc_shadow_weights: t.Dict[str, np.ndarray]
    fc_ternary: t.Dict[str, TernaryMatrix]
    phase: Phase
    hyper: TrainHyper
    loss_history: t.List[float] = field(default_factory=list)

    def fc_layers(self) -> t.List[TernaryMatrix]:
        return [self.fc_ternary[spec.name] for spec in self.topology.dense_layers()]

    def conv_checksum(self) -> str:
        """sha256 over every conv tensor, in layer order."""
        digest = hashlib.sha256()
        for name in sorted(self.conv_weights):
            for key in ("weight", "bias"):
                arr = np.ascontiguousarray(self.conv_weights[name][key])
                digest.update(f"{name}.{key}{arr.shape}{arr.dtype}".encode())
                digest.update(arr.tobytes())
        return digest.hexdigest()

    def boundary(self, images: np.ndarray) -> np.ndarray:
        return boundary_preactivations(
            self.topology, self.conv_weights, self.input_shape, images
        )


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_state(
    topology: NetworkTopology,
    input_shape: t.Tuple[int, int, int],
    hyper: TrainHyper,
) -> TrainState:
    """Untrained step-1 state with He-initialized weights.

    Raises:
        TopologyValidationError: If the topology does not validate in hybrid mode.
        ConfigError: If the topology has no FC block.
    """
    problems = errors(validate(topology, hybrid_mode=True))
    if problems:
        raise TopologyValidationError("; ".join(str(p) for p in problems))
    split_topology(topology)
    rng = np.random.default_rng(hyper.seed)
    conv: t.Dict[str, t.Dict[str, np.ndarray]] = {}
    shadow: t.Dict[str, np.ndarray] = {}
    for spec in topology.layers:
        fan_in = spec.filter_h * spec.filter_w
        if spec.kind is LayerKind.CONV:
            conv[spec.name] = {
                "weight": _he_normal(
                    rng,
                    (spec.filter_h, spec.filter_w, spec.channels_in, spec.num_filters),
                    fan_in * spec.channels_in,
                ),
                "bias": np.zeros(spec.num_filters),
            }
        elif spec.kind is LayerKind.DEPTHWISE_CONV:
            conv[spec.name] = {
                "weight": _he_normal(
                    rng, (spec.filter_h, spec.filter_w, spec.channels_in), fan_in
                ),
                "bias": np.zeros(spec.channels_in),
            }
        elif spec.kind is LayerKind.DENSE:
            shadow[spec.name] = _he_normal(
                rng, (spec.num_filters, spec.channels_in), spec.channels_in
            )
    return TrainState(
        topology=topology,
        input_shape=tuple(input_shape),
        conv_weights=conv,
        fc_shadow_weights=shadow,
        fc_ternary={name: ternarize(w) for name, w in shadow.items()},
        phase=Phase.STEP1,
        hyper=hyper,
    )


def _run_epochs(
    trainable: t.Sequence[L.Layer],
    inputs: np.ndarray,
    labels: np.ndarray,
    hyper: TrainHyper,
    rng: np.random.Generator,
    label: str,
    on_epoch: t.Optional[t.Callable[[int], None]] = None,
) -> t.List[float]:
    optimizer = L.SGD(trainable, hyper.learning_rate, hyper.momentum)
    history = []
    n = len(labels)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for batch in chunks(order, hyper.batch_size):
            logits = L.run_forward(trainable, inputs[batch].astype(np.float64))
            loss, grad = L.softmax_cross_entropy(logits, labels[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"{label}: loss became {loss} in epoch {epoch}")
            L.run_backward(trainable, grad)
            optimizer.step()
            if not optimizer.params_finite():
                raise TrainingDivergedError(f"{label}: weights became non-finite in epoch {epoch}")
            total += loss * len(batch)
        history.append(total / n)
        logger.info(f"{label} epoch {epoch}/{hyper.epochs}: loss {history[-1]:.4f}")
        if on_epoch is not None:
            on_epoch(epoch)
    return history


def train_step1(
    topology: NetworkTopology, data: LabeledDataset, hyper: TrainHyper
) -> TrainState:
    """Full-precision training of every layer.

    Args:
        topology: Workload with a trailing FC block.
        data: Training samples.
        hyper: Optimizer settings; ``hyper.seed`` fixes initialization and
            minibatch order.

    Returns:
        TrainState: Step-1 state.
    """
    state = init_state(topology, data.sample_shape, hyper)
    net = build_network(
        topology, state.conv_weights, state.fc_shadow_weights, state.input_shape, Phase.STEP1
    )
    rng = np.random.default_rng([hyper.seed, 1])
    history = _run_epochs(net.layers, data.images, data.labels, hyper, rng, "step 1")
    state.fc_ternary = {name: ternarize(w) for name, w in state.fc_shadow_weights.items()}
    state.loss_history = history
    return state


def train_step2(
    state: TrainState,
    data: LabeledDataset,
    hyper: t.Optional[TrainHyper] = None,
    on_checkpoint: t.Optional[t.Callable[[TrainState], None]] = None,
) -> TrainState:
    """Retrain the FC block with ternary weights behind frozen convolutions.

    The frozen extractor runs once over the data and only the sign bits of
    its output are kept, since no gradient reaches the convolutions.

    Args:
        state: Step-1 state; it is left unmodified.
        data: Training samples.
        hyper: Optimizer settings, defaults to the step-1 settings.
        on_checkpoint: Called with the current state after every epoch.

    Raises:
        StateError: If ``state`` is not a step-1 state.
    """
    if state.phase is not Phase.STEP1:
        raise StateError(f"train_step2 needs a step1 state, got {state.phase.value}")
    hyper = hyper or state.hyper
    conv = {
        name: {key: arr.copy() for key, arr in params.items()}
        for name, params in state.conv_weights.items()
    }
    shadow = {name: w.copy() for name, w in state.fc_shadow_weights.items()}
    new_state = TrainState(
        topology=state.topology,
        input_shape=state.input_shape,
        conv_weights=conv,
        fc_shadow_weights=shadow,
        fc_ternary={name: ternarize(w) for name, w in shadow.items()},
        phase=Phase.STEP2,
        hyper=hyper,
    )
    bits = sign_binarize(new_state.boundary(data.images))
    head = build_head(state.topology, shadow, Phase.STEP2, hyper.neuron_slope)

    def checkpoint(_epoch: int):
        new_state.fc_ternary = {name: ternarize(w) for name, w in shadow.items()}
        if on_checkpoint is not None:
            on_checkpoint(new_state)

    rng = np.random.default_rng([hyper.seed, 2])
    new_state.loss_history = _run_epochs(
        head, bits, data.labels, hyper, rng, "step 2", on_epoch=checkpoint
    )
    return new_state

