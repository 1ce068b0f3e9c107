"""Weight export for the accelerator.

Conv tensors are written as ``<u8 ndim``, ``ndim`` x ``<u8`` dims, then
little-endian float32 data in row-major order. FC layers use the ternary
weight format of :mod:`tpu_imac_sim.imac`. A ``manifest.txt`` lists one
``layer_name kind rows cols file`` line per file; ``#`` lines carry the
topology name and, when known, the accuracies of both training steps.
"""

import typing as t
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tpu_imac_sim.defaults import MANIFEST_FILENAME
from tpu_imac_sim.exceptions import FormatError, ManifestMismatchError, StateError
from tpu_imac_sim.helper import atomic_write_bytes, atomic_write_text, ensure_dir
from tpu_imac_sim.imac import TernaryMatrix, read_ternary, write_ternary
from tpu_imac_sim.logger import logger
from tpu_imac_sim.mptrain.network import Phase
from tpu_imac_sim.mptrain.train import TrainHyper, TrainState
from tpu_imac_sim.topology import LayerKind, NetworkTopology


@dataclass(frozen=True)
class ManifestEntry:
    layer: str
    kind: str
    rows: int
    cols: int
    file: str

    def to_line(self) -> str:
        return f"{self.layer} {self.kind} {self.rows} {self.cols} {self.file}"


@dataclass
class Manifest:
    topology: str
    entries: t.List[ManifestEntry] = field(default_factory=list)
    input_shape: t.Optional[t.Tuple[int, int, int]] = None
    accuracy_step1: t.Optional[float] = None
    accuracy_step2: t.Optional[float] = None

    def dense_entries(self) -> t.List[ManifestEntry]:
        return [e for e in self.entries if e.kind == LayerKind.DENSE.value]

    def to_text(self) -> str:
        lines = [f"# topology {self.topology}"]
        if self.input_shape is not None:
            lines.append("# input_shape " + " ".join(map(str, self.input_shape)))
        if self.accuracy_step1 is not None:
            lines.append(f"# accuracy_step1 {self.accuracy_step1:.6f}")
        if self.accuracy_step2 is not None:
            lines.append(f"# accuracy_step2 {self.accuracy_step2:.6f}")
        lines.extend(entry.to_line() for entry in self.entries)
        return "\n".join(lines) + "\n"


def write_tensor(path: t.Union[str, Path], arr: np.ndarray) -> Path:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = np.array([arr.ndim, *arr.shape], dtype="<u8")
    return atomic_write_bytes(path, header.tobytes() + arr.tobytes())


def read_tensor(path: t.Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: tensor file shorter than its header")
    ndim = int(np.frombuffer(raw, dtype="<u8", count=1)[0])
    head = 8 * (1 + ndim)
    if len(raw) < head:
        raise FormatError(f"{path}: truncated tensor header")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u8", count=ndim, offset=8))
    body = raw[head:]
    if len(body) != 4 * int(np.prod(dims)):
        raise FormatError(f"{path}: header declares {dims}, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(dims).copy()


def export_weights(
    state: TrainState,
    out_dir: t.Union[str, Path],
    accuracy_step1: t.Optional[float] = None,
    accuracy_step2: t.Optional[float] = None,
) -> t.List[Path]:
    """Write every weight file of a step-2 state plus its manifest.

    Returns:
        list[Path]: Written files, manifest last.

    Raises:
        StateError: If ``state`` is not a step-2 state.
        OSError: If ``out_dir`` cannot be written.
    """
    if state.phase is not Phase.STEP2:
        raise StateError("only step2 states can be exported")
    out_dir = ensure_dir(out_dir)
    manifest = Manifest(
        topology=state.topology.name,
        input_shape=state.input_shape,
        accuracy_step1=accuracy_step1,
        accuracy_step2=accuracy_step2,
    )
    written = []
    for spec in state.topology.layers:
        if spec.kind in (LayerKind.CONV, LayerKind.DEPTHWISE_CONV):
            params = state.conv_weights[spec.name]
            weight = params["weight"]
            weight_file = f"{spec.name}.weight.f32"
            bias_file = f"{spec.name}.bias.f32"
            written.append(write_tensor(out_dir / weight_file, weight))
            written.append(write_tensor(out_dir / bias_file, params["bias"]))
            manifest.entries.append(
                ManifestEntry(
                    spec.name,
                    spec.kind.value,
                    int(np.prod(weight.shape[:-1])),
                    weight.shape[-1],
                    weight_file,
                )
            )
            manifest.entries.append(
                ManifestEntry(spec.name, "Bias", 1, len(params["bias"]), bias_file)
            )
        elif spec.kind is LayerKind.DENSE:
            matrix = state.fc_ternary[spec.name]
            fc_file = f"{spec.name}.tern"
            written.append(write_ternary(out_dir / fc_file, matrix))
            manifest.entries.append(
                ManifestEntry(spec.name, spec.kind.value, matrix.rows, matrix.cols, fc_file)
            )
    manifest_path = atomic_write_text(out_dir / MANIFEST_FILENAME, manifest.to_text())
    written.append(manifest_path)
    logger.info(f"Exported {len(written) - 1} weight files to {out_dir}")
    return written


def read_manifest(path: t.Union[str, Path]) -> Manifest:
    """Parse a manifest file; ``path`` may also be the export directory."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILENAME
    manifest = Manifest(topology="")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            try:
                if key == "topology":
                    manifest.topology = value.strip()
                elif key == "input_shape":
                    manifest.input_shape = tuple(int(v) for v in value.split())
                elif key == "accuracy_step1":
                    manifest.accuracy_step1 = float(value)
                elif key == "accuracy_step2":
                    manifest.accuracy_step2 = float(value)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value for {key}") from None
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 'layer kind rows cols file'")
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: rows and cols must be integers") from None
        manifest.entries.append(ManifestEntry(parts[0], parts[1], rows, cols, parts[4]))
    if not manifest.topology:
        raise FormatError(f"{path}: manifest does not name its topology")
    return manifest


def check_manifest(manifest: Manifest, topology: NetworkTopology) -> None:
    """Raise ManifestMismatchError unless the manifest belongs to ``topology``."""
    if manifest.topology != topology.name:
        raise ManifestMismatchError(
            f"weights were exported for {manifest.topology!r}, not {topology.name!r}"
        )
    dense = topology.dense_layers()
    entries = manifest.dense_entries()
    if [e.layer for e in entries] != [d.name for d in dense]:
        raise ManifestMismatchError(
            f"manifest FC layers do not match the Dense layers of {topology.name}"
        )
    for entry, spec in zip(entries, dense):
        if (entry.rows, entry.cols) != (spec.num_filters, spec.channels_in):
            raise ManifestMismatchError(
                f"{entry.layer}: manifest has {entry.rows}x{entry.cols}, "
                f"topology needs {spec.num_filters}x{spec.channels_in}"
            )


def load_exported(
    path: t.Union[str, Path],
    topology: NetworkTopology,
    hyper: t.Optional[TrainHyper] = None,
) -> TrainState:
    """Rebuild a step-2 state from an export directory or manifest path.

    FC shadow weights are not exported; the reloaded state carries the
    ternary values as its shadow weights, which ternarize back to themselves.
    """
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    check_manifest(manifest, topology)
    conv: t.Dict[str, t.Dict[str, np.ndarray]] = {}
    fc: t.Dict[str, TernaryMatrix] = {}
    for entry in manifest.entries:
        if entry.kind == LayerKind.DENSE.value:
            fc[entry.layer] = read_ternary(root / entry.file)
        elif entry.kind == "Bias":
            conv.setdefault(entry.layer, {})["bias"] = read_tensor(root / entry.file)
        else:
            conv.setdefault(entry.layer, {})["weight"] = read_tensor(root / entry.file)
    if manifest.input_shape is None:
        raise FormatError("manifest does not record the input shape")
    return TrainState(
        topology=topology,
        input_shape=manifest.input_shape,
        conv_weights=conv,
        fc_shadow_weights={k: m.values.astype(np.float64) for k, m in fc.items()},
        fc_ternary=fc,
        phase=Phase.STEP2,
        hyper=hyper or TrainHyper(),
    )
