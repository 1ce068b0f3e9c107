import enum
import typing as t
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from tpu_imac_sim.exceptions import ConfigError, StateError
from tpu_imac_sim.helper import ceil_div, chunks
from tpu_imac_sim.imac import (
    CrossbarConfig,
    forward_fc,
    forward_logits,
    program_crossbar,
    reference_fc,
    reference_logits,
)
from tpu_imac_sim.mptrain import layers as L
from tpu_imac_sim.mptrain.data import LabeledDataset
from tpu_imac_sim.mptrain.network import Phase, build_head
from tpu_imac_sim.mptrain.quantize import sign_binarize
from tpu_imac_sim.mptrain.train import TrainState


class Backend(str, enum.Enum):
    DIGITAL = "digital"
    ANALOG = "analog"


class FCBackend(ABC):
    """Abstract base class for whatever executes the FC block of a trained state."""

    def __init__(self, state: TrainState):
        self.state = state

    @abstractmethod
    def logits(self, boundary: np.ndarray) -> np.ndarray:
        """Pre-activations of the last FC layer for a batch of boundary values.

        Args:
            boundary (np.ndarray): ``N x F`` flattened extractor outputs.

        Returns:
            np.ndarray: ``N x classes`` column sums.
        """
        raise NotImplementedError

    @abstractmethod
    def scores(self, boundary: np.ndarray) -> np.ndarray:
        """Class scores as the hardware reports them (after the ADC in step 2)."""
        raise NotImplementedError

    def predict(self, boundary: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(boundary), axis=1)


class DigitalBackend(FCBackend):
    """Exact arithmetic.

    A step-1 state runs tanh and the real-valued ReLU head. A step-2 state
    runs the ternary sigmoid head; classes are ranked on the last layer's
    pre-activations, which the analog engine reproduces exactly at zero
    variation.
    """

    def __init__(self, state: TrainState, xbar_cfg: t.Optional[CrossbarConfig] = None):
        super().__init__(state)
        self.xbar_cfg = xbar_cfg or CrossbarConfig(neuron_slope=state.hyper.neuron_slope)

    def logits(self, boundary):
        if self.state.phase is Phase.STEP1:
            head = build_head(self.state.topology, self.state.fc_shadow_weights, Phase.STEP1)
            return L.run_forward(head, np.tanh(boundary))
        return reference_logits(self.state.fc_layers(), sign_binarize(boundary), self.xbar_cfg)

    def scores(self, boundary):
        if self.state.phase is Phase.STEP1:
            return self.logits(boundary)
        return reference_fc(self.state.fc_layers(), sign_binarize(boundary), self.xbar_cfg)


class AnalogBackend(FCBackend):
    """FC block programmed onto IMAC crossbars, one crossbar per Dense layer."""

    def __init__(
        self, state: TrainState, xbar_cfg: CrossbarConfig, seed: t.Optional[int] = None
    ):
        super().__init__(state)
        if state.phase is not Phase.STEP2:
            raise StateError("the analog backend needs a step2 state")
        layers = state.fc_layers()
        if seed is None:
            seeds = [None] * len(layers)
        else:
            seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(len(layers))]
        self.xbars = [program_crossbar(w, xbar_cfg, s) for w, s in zip(layers, seeds)]

    def logits(self, boundary):
        return forward_logits(self.xbars, sign_binarize(boundary))

    def scores(self, boundary):
        return forward_fc(self.xbars, sign_binarize(boundary))


def make_backend(
    state: TrainState,
    backend: t.Union[Backend, str] = Backend.DIGITAL,
    xbar_cfg: t.Optional[CrossbarConfig] = None,
    seed: t.Optional[int] = None,
) -> FCBackend:
    backend = Backend(backend)
    if backend is Backend.ANALOG:
        if xbar_cfg is None:
            raise ConfigError("the analog backend needs a crossbar configuration")
        return AnalogBackend(state, xbar_cfg, seed)
    return DigitalBackend(state, xbar_cfg)


def predict(
    state: TrainState,
    data: LabeledDataset,
    backend: t.Union[Backend, str] = Backend.DIGITAL,
    xbar_cfg: t.Optional[CrossbarConfig] = None,
    seed: t.Optional[int] = None,
    workers: int = 1,
) -> np.ndarray:
    """Per-sample class indices, in dataset order.

    With ``workers > 1`` the dataset is split into contiguous shards that run
    on a thread pool; crossbars are programmed once and shared.
    """
    fc = make_backend(state, backend, xbar_cfg, seed)

    def run(indices: np.ndarray) -> np.ndarray:
        return fc.predict(state.boundary(data.images[indices]))

    order = np.arange(len(data))
    if workers <= 1:
        return run(order)
    shards = list(chunks(order, ceil_div(len(order), workers)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(run, shards)))


def evaluate(
    state: TrainState,
    data: LabeledDataset,
    backend: t.Union[Backend, str] = Backend.DIGITAL,
    xbar_cfg: t.Optional[CrossbarConfig] = None,
    seed: t.Optional[int] = None,
    workers: int = 1,
) -> float:
    """Fraction of samples classified correctly.

    Raises:
        ConfigError: For the analog backend without a crossbar configuration.
        StateError: For the analog backend on a step-1 state.
    """
    predictions = predict(state, data, backend, xbar_cfg, seed, workers)
    return float(np.mean(predictions == data.labels))
