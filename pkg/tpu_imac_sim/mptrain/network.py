"""Assemble gradient-engine layers from a workload topology.

The network is split at the FC boundary: the feature extractor (every layer
before the first Dense layer), the boundary activation applied to the
flattened features, and the FC head. The last Conv/DepthwiseConv of the
extractor has no ReLU, so the boundary sees its raw output.
"""

import enum
import typing as t
from dataclasses import dataclass

import numpy as np

from tpu_imac_sim.exceptions import ConfigError, DimensionError
from tpu_imac_sim.mptrain import layers as L
from tpu_imac_sim.topology import LayerKind, LayerSpec, NetworkTopology, output_shape


class Phase(str, enum.Enum):
    STEP1 = "step1"
    STEP2 = "step2"


@dataclass
class Network:
    features: t.List[L.Layer]
    boundary: L.Layer
    head: t.List[L.Layer]

    @property
    def layers(self) -> t.List[L.Layer]:
        return self.features + [self.boundary] + self.head

    def forward(self, x: np.ndarray) -> np.ndarray:
        return L.run_forward(self.layers, x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return L.run_backward(self.layers, grad)


def split_topology(topology: NetworkTopology) -> t.Tuple[t.List[LayerSpec], t.List[LayerSpec]]:
    first = topology.first_dense_index()
    if first is None:
        raise ConfigError(f"{topology.name} has no FC block to train")
    return list(topology.layers[:first]), list(topology.layers[first:])


def build_features(
    topology: NetworkTopology,
    conv_weights: t.Mapping[str, t.Mapping[str, np.ndarray]],
    input_shape: t.Tuple[int, int, int],
) -> t.List[L.Layer]:
    """Feature-extractor layers ending in a flatten.

    Args:
        topology: Workload the layers follow.
        conv_weights: ``weight``/``bias`` arrays per Conv/DepthwiseConv name.
        input_shape: ``H x W x C`` of one input sample.
    """
    specs, _ = split_topology(topology)
    compute = [i for i, s in enumerate(specs) if s.kind.is_compute]
    last_compute = compute[-1] if compute else None
    shape = tuple(input_shape)
    out: t.List[L.Layer] = []
    for i, spec in enumerate(specs):
        if spec.channels_in != shape[2]:
            raise DimensionError(
                f"{spec.name}: expects {spec.channels_in} channels, receives {shape[2]}"
            )
        if spec.kind.is_spatial:
            halo_h, halo_w = spec.ifmap_h - shape[0], spec.ifmap_w - shape[1]
            if min(halo_h, halo_w) < 0 or halo_h % 2 or halo_w % 2:
                raise DimensionError(
                    f"{spec.name}: declared ifmap {spec.ifmap_h}x{spec.ifmap_w} "
                    f"cannot pad a {shape[0]}x{shape[1]} input"
                )
            if halo_h or halo_w:
                out.append(L.ZeroPad(f"{spec.name}.pad", halo_h // 2, halo_w // 2))
        if spec.kind is LayerKind.CONV:
            p = conv_weights[spec.name]
            out.append(L.Conv2D(spec.name, p["weight"], p["bias"], spec.stride))
        elif spec.kind is LayerKind.DEPTHWISE_CONV:
            p = conv_weights[spec.name]
            out.append(L.DepthwiseConv2D(spec.name, p["weight"], p["bias"], spec.stride))
        elif spec.kind is LayerKind.MAX_POOL:
            out.append(L.MaxPool2D(spec.name, (spec.filter_h, spec.filter_w), spec.stride))
        elif spec.kind is LayerKind.AVG_POOL:
            out.append(L.AvgPool2D(spec.name, (spec.filter_h, spec.filter_w), spec.stride))
        elif spec.kind is LayerKind.FLATTEN:
            out.append(L.Flatten(spec.name))
        if spec.kind.is_compute and i != last_compute:
            out.append(L.ReLU(f"{spec.name}.relu"))
        shape = output_shape(spec)
    if not specs or specs[-1].kind is not LayerKind.FLATTEN:
        out.append(L.Flatten("_flatten"))
    return out


def feature_size(topology: NetworkTopology) -> int:
    _, dense = split_topology(topology)
    return dense[0].channels_in


def build_head(
    topology: NetworkTopology,
    shadow: t.Mapping[str, np.ndarray],
    phase: Phase,
    neuron_slope: float = 1.0,
) -> t.List[L.Layer]:
    """FC layers: ReLU hidden units in step 1, ternary sigmoid units in step 2."""
    _, dense = split_topology(topology)
    out: t.List[L.Layer] = []
    for i, spec in enumerate(dense):
        if phase is Phase.STEP1:
            out.append(L.Dense(spec.name, shadow[spec.name]))
        else:
            out.append(L.TernaryDense(spec.name, shadow[spec.name]))
        if i < len(dense) - 1:
            if phase is Phase.STEP1:
                out.append(L.ReLU(f"{spec.name}.relu"))
            else:
                out.append(L.Sigmoid(f"{spec.name}.sigmoid", neuron_slope))
    return out


def build_boundary(phase: Phase) -> L.Layer:
    return L.Tanh("boundary") if phase is Phase.STEP1 else L.SignSTE("boundary")


def build_network(
    topology: NetworkTopology,
    conv_weights,
    shadow,
    input_shape,
    phase: Phase,
    neuron_slope: float = 1.0,
) -> Network:
    return Network(
        features=build_features(topology, conv_weights, input_shape),
        boundary=build_boundary(phase),
        head=build_head(topology, shadow, phase, neuron_slope),
    )


def boundary_preactivations(
    topology: NetworkTopology,
    conv_weights,
    input_shape,
    images: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """Raw flattened features entering the boundary activation, batch by batch."""
    features = build_features(topology, conv_weights, input_shape)
    size = feature_size(topology)
    out = np.empty((len(images), size), dtype=np.float64)
    for start in range(0, len(images), batch_size):
        x = images[start : start + batch_size].astype(np.float64)
        flat = L.run_forward(features, x)
        if flat.shape[1] != size:
            raise DimensionError(f"features flatten to {flat.shape[1]}, FC block expects {size}")
        out[start : start + batch_size] = flat
    return out
