"""CNN workload descriptions in the Scale-Sim CSV layout.

A workload file has a header line and one row per layer with the columns
``name, ifmap_h, ifmap_w, filter_h, filter_w, channels_in, num_filters,
stride, kind``. Convolutions are valid (unpadded); a layer that needs zero
padding declares its pre-padded ifmap size.
"""

import csv
import enum
import io
import re
import typing as t
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from tpu_imac_sim.defaults import BUNDLED_TOPOLOGIES
from tpu_imac_sim.exceptions import (
    LoweringError,
    TopologyParseError,
    TopologyValidationError,
)

CSV_COLUMNS = (
    "name",
    "ifmap_h",
    "ifmap_w",
    "filter_h",
    "filter_w",
    "channels_in",
    "num_filters",
    "stride",
    "kind",
)
_INT_COLUMNS = CSV_COLUMNS[1:8]
_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class LayerKind(str, enum.Enum):
    CONV = "Conv"
    DEPTHWISE_CONV = "DepthwiseConv"
    MAX_POOL = "MaxPool"
    AVG_POOL = "AvgPool"
    DENSE = "Dense"
    FLATTEN = "Flatten"

    @property
    def is_spatial(self) -> bool:
        """True for layers that slide a window over an ifmap."""
        return self in _SPATIAL_KINDS

    @property
    def is_pool(self) -> bool:
        return self in (LayerKind.MAX_POOL, LayerKind.AVG_POOL)

    @property
    def is_compute(self) -> bool:
        """True for layers that carry weights and run on a compute unit."""
        return self in (LayerKind.CONV, LayerKind.DEPTHWISE_CONV, LayerKind.DENSE)


_SPATIAL_KINDS = frozenset(
    {LayerKind.CONV, LayerKind.DEPTHWISE_CONV, LayerKind.MAX_POOL, LayerKind.AVG_POOL}
)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    ifmap_h: int
    ifmap_w: int
    filter_h: int
    filter_w: int
    channels_in: int
    num_filters: int
    stride: int = 1

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise TopologyValidationError(
                f"layer name {self.name!r} must match [A-Za-z0-9_.-]+"
            )
        for column in _INT_COLUMNS:
            if getattr(self, column) <= 0:
                raise TopologyValidationError(f"{column} must be positive")
        if self.kind.is_spatial and (
            self.filter_h > self.ifmap_h or self.filter_w > self.ifmap_w
        ):
            raise TopologyValidationError(
                f"{self.name}: filter {self.filter_h}x{self.filter_w} exceeds "
                f"ifmap {self.ifmap_h}x{self.ifmap_w}"
            )
        if self.kind is LayerKind.DEPTHWISE_CONV and self.num_filters != self.channels_in:
            raise TopologyValidationError(
                f"{self.name}: DepthwiseConv needs num_filters == channels_in"
            )
        if self.kind is LayerKind.DENSE and (self.ifmap_h != 1 or self.ifmap_w != 1):
            raise TopologyValidationError(f"{self.name}: Dense layers need a 1x1 ifmap")

    @property
    def input_shape(self) -> t.Tuple[int, int, int]:
        return (self.ifmap_h, self.ifmap_w, self.channels_in)

    @property
    def output_shape(self) -> t.Tuple[int, int, int]:
        return output_shape(self)

    @property
    def output_elements(self) -> int:
        h, w, c = output_shape(self)
        return h * w * c

    @property
    def params(self) -> int:
        return param_count(self)

    def to_row(self) -> str:
        values = [self.name] + [str(getattr(self, c)) for c in _INT_COLUMNS]
        return ",".join(values + [self.kind.value])


@dataclass(frozen=True)
class GemmShape:
    """Matrix multiply ``(m x k) @ (k x n)`` a layer lowers to."""

    m: int
    k: int
    n: int

    def __post_init__(self):
        if min(self.m, self.k, self.n) < 1:
            raise TopologyValidationError(
                f"GEMM dimensions must be >= 1, got ({self.m}, {self.k}, {self.n})"
            )

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n


class Severity(str, enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Finding:
    severity: Severity
    layer: str
    message: str

    def __str__(self):
        where = f"{self.layer}: " if self.layer else ""
        return f"{self.severity.value}: {where}{self.message}"


@dataclass(frozen=True)
class NetworkTopology:
    name: str
    layers: t.Tuple[LayerSpec, ...]
    dataset_tag: str = ""
    _index: t.Dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(
            self, "_index", {layer.name: i for i, layer in enumerate(self.layers)}
        )

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self._index[name]]

    def dense_layers(self) -> t.List[LayerSpec]:
        return [layer for layer in self.layers if layer.kind is LayerKind.DENSE]

    def first_dense_index(self) -> t.Optional[int]:
        for i, layer in enumerate(self.layers):
            if layer.kind is LayerKind.DENSE:
                return i
        return None

    def total_params(self) -> int:
        return sum(param_count(layer) for layer in self.layers)

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)] + [layer.to_row() for layer in self.layers]
        return "\n".join(lines) + "\n"


def output_shape(layer: LayerSpec) -> t.Tuple[int, int, int]:
    """Return ``(h_out, w_out, c_out)`` of a layer under valid convolution."""
    kind = layer.kind
    if kind is LayerKind.DENSE:
        return (1, 1, layer.num_filters)
    if kind is LayerKind.FLATTEN:
        return (1, 1, layer.ifmap_h * layer.ifmap_w * layer.channels_in)
    h_out = (layer.ifmap_h - layer.filter_h) // layer.stride + 1
    w_out = (layer.ifmap_w - layer.filter_w) // layer.stride + 1
    c_out = layer.channels_in if kind.is_pool else layer.num_filters
    return (h_out, w_out, c_out)


def param_count(layer: LayerSpec) -> int:
    """Number of stored parameters, conv biases included, Dense without bias."""
    kind = layer.kind
    if kind is LayerKind.CONV:
        return (
            layer.filter_h * layer.filter_w * layer.channels_in * layer.num_filters
            + layer.num_filters
        )
    if kind is LayerKind.DEPTHWISE_CONV:
        return layer.filter_h * layer.filter_w * layer.channels_in + layer.channels_in
    if kind is LayerKind.DENSE:
        return layer.channels_in * layer.num_filters
    return 0


def mac_count(layer: LayerSpec) -> int:
    h_out, w_out, _ = output_shape(layer)
    kind = layer.kind
    if kind is LayerKind.CONV:
        return (
            h_out * w_out * layer.filter_h * layer.filter_w
            * layer.channels_in * layer.num_filters
        )
    if kind is LayerKind.DEPTHWISE_CONV:
        return h_out * w_out * layer.filter_h * layer.filter_w * layer.channels_in
    if kind is LayerKind.DENSE:
        return layer.channels_in * layer.num_filters
    return 0


def to_gemm(layer: LayerSpec) -> GemmShape:
    """Lower a Conv (im2col) or Dense (batch 1) layer to a GEMM.

    Raises:
        LoweringError: For pooling, flatten and depthwise layers. Depthwise
            layers lower per channel, see :func:`depthwise_gemm`.
    """
    if layer.kind is LayerKind.CONV:
        h_out, w_out, _ = output_shape(layer)
        return GemmShape(
            m=h_out * w_out,
            k=layer.filter_h * layer.filter_w * layer.channels_in,
            n=layer.num_filters,
        )
    if layer.kind is LayerKind.DENSE:
        return GemmShape(m=1, k=layer.channels_in, n=layer.num_filters)
    if layer.kind is LayerKind.DEPTHWISE_CONV:
        raise LoweringError(
            f"{layer.name}: DepthwiseConv lowers to one GEMM per channel"
        )
    raise LoweringError(f"{layer.name}: no GEMM lowering for {layer.kind.value}")


def depthwise_gemm(layer: LayerSpec) -> GemmShape:
    """The single-channel GEMM a DepthwiseConv layer runs once per channel."""
    if layer.kind is not LayerKind.DEPTHWISE_CONV:
        raise LoweringError(f"{layer.name} is not a DepthwiseConv layer")
    h_out, w_out, _ = output_shape(layer)
    return GemmShape(m=h_out * w_out, k=layer.filter_h * layer.filter_w, n=1)


def parse_topology(text: str, name: str = "topology", dataset_tag: str = "") -> NetworkTopology:
    """Parse workload CSV contents.

    The first non-blank line is the header. A trailing empty column (as
    written by Scale-Sim) is tolerated.

    Args:
        text: Contents of the workload file.
        name: Topology name, usually the file stem.
        dataset_tag: Dataset the workload is shaped for.

    Returns:
        NetworkTopology: One layer per data row, in file order.

    Raises:
        TopologyParseError: On a malformed row or unknown layer kind.
        TopologyValidationError: On a non-positive or inconsistent dimension.
    """
    kinds = {kind.value: kind for kind in LayerKind}
    layers = []
    header_seen = False
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        cells = [cell.strip() for cell in row]
        if cells and cells[-1] == "" and len(cells) == len(CSV_COLUMNS) + 1:
            cells = cells[:-1]
        if not any(cells):
            continue
        if not header_seen:
            header_seen = True
            continue
        if len(cells) != len(CSV_COLUMNS):
            raise TopologyParseError(
                f"row {lineno}: expected {len(CSV_COLUMNS)} columns, got {len(cells)}"
            )
        values = {}
        for column, cell in zip(_INT_COLUMNS, cells[1:8]):
            try:
                values[column] = int(cell)
            except ValueError:
                raise TopologyParseError(
                    f"row {lineno}: {column} is not an integer: {cell!r}"
                ) from None
        if cells[8] not in kinds:
            raise TopologyParseError(f"row {lineno}: unknown layer kind {cells[8]!r}")
        try:
            layers.append(LayerSpec(name=cells[0], kind=kinds[cells[8]], **values))
        except TopologyValidationError as e:
            raise TopologyValidationError(f"row {lineno}: {e}") from None
    if not layers:
        raise TopologyParseError("workload file has no layer rows")
    names = [layer.name for layer in layers]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise TopologyParseError(f"duplicate layer names: {', '.join(duplicates)}")
    return NetworkTopology(name=name, layers=tuple(layers), dataset_tag=dataset_tag)


def _dataset_from_stem(stem: str) -> str:
    return stem.rsplit("_", 1)[1] if "_" in stem else ""


def load_topology(path: t.Union[str, Path]) -> NetworkTopology:
    """Read a workload file; the file stem names the topology."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except UnicodeDecodeError as e:
        raise TopologyParseError(f"{path}: not an ASCII CSV file ({e.reason})") from None
    return parse_topology(text, name=path.stem, dataset_tag=_dataset_from_stem(path.stem))


def bundled_names() -> t.Tuple[str, ...]:
    return BUNDLED_TOPOLOGIES


def bundled_topology(name: str) -> NetworkTopology:
    """Load one of the workloads shipped with the package by name."""
    if name not in BUNDLED_TOPOLOGIES:
        raise FileNotFoundError(
            f"No bundled topology named {name!r}. "
            f"Available: {', '.join(BUNDLED_TOPOLOGIES)}"
        )
    text = (
        resources.files("tpu_imac_sim.topologies")
        .joinpath(f"{name}.csv")
        .read_text(encoding="ascii")
    )
    return parse_topology(text, name=name, dataset_tag=_dataset_from_stem(name))


def resolve_topology(ref: t.Union[str, Path]) -> NetworkTopology:
    """Load a workload from a path, falling back to a bundled name."""
    path = Path(ref)
    if path.exists() or str(ref) not in BUNDLED_TOPOLOGIES:
        return load_topology(path)
    return bundled_topology(str(ref))


def _chain_finding(prev: LayerSpec, cur: LayerSpec) -> t.Optional[Finding]:
    h, w, c = output_shape(prev)
    produced = f"{h}x{w}x{c}"

    def mismatch() -> Finding:
        return Finding(
            Severity.ERROR,
            cur.name,
            f"input {cur.ifmap_h}x{cur.ifmap_w}x{cur.channels_in} does not chain "
            f"from {prev.name} output {produced}",
        )

    if cur.kind is LayerKind.DENSE:
        return None if h * w * c == cur.channels_in else mismatch()
    if cur.channels_in != c:
        return mismatch()
    if cur.kind is LayerKind.FLATTEN:
        return None if (cur.ifmap_h, cur.ifmap_w) == (h, w) else mismatch()
    # pre-padded inputs carry a symmetric zero halo around the previous output
    for declared, produced_dim, filt in (
        (cur.ifmap_h, h, cur.filter_h),
        (cur.ifmap_w, w, cur.filter_w),
    ):
        halo = declared - produced_dim
        if halo < 0 or halo % 2 or halo > 2 * (filt - 1):
            return mismatch()
    return None


def validate(
    topology: NetworkTopology, hybrid_mode: bool, array_pes: int = 1024
) -> t.List[Finding]:
    """Check a topology and report findings instead of raising.

    Args:
        topology: Workload to check.
        hybrid_mode: Apply the TPU+IMAC structural rules.
        array_pes: Systolic array PE count (rows * cols) the flatten vector
            is expected to match in hybrid mode.

    Returns:
        list[Finding]: Errors and warnings in layer order.
    """
    findings: t.List[Finding] = []
    if not topology.layers:
        return [Finding(Severity.ERROR, "", "topology has no layers")]

    for layer in topology.layers:
        if layer.kind is LayerKind.FLATTEN:
            expected = layer.ifmap_h * layer.ifmap_w * layer.channels_in
            if layer.num_filters != expected:
                findings.append(
                    Finding(
                        Severity.ERROR,
                        layer.name,
                        f"flatten declares {layer.num_filters} outputs, input has {expected}",
                    )
                )

    for prev, cur in zip(topology.layers, topology.layers[1:]):
        finding = _chain_finding(prev, cur)
        if finding is not None:
            findings.append(finding)

    if hybrid_mode:
        first = topology.first_dense_index()
        if first is not None:
            for layer in topology.layers[first + 1 :]:
                if layer.kind is not LayerKind.DENSE:
                    findings.append(
                        Finding(Severity.ERROR, layer.name, "FC block must be trailing")
                    )
            flatten = topology.layers[first].channels_in
            if flatten != array_pes:
                findings.append(
                    Finding(
                        Severity.WARNING,
                        topology.layers[first].name,
                        f"flatten {flatten} ≠ {array_pes}",
                    )
                )
    return findings


def errors(findings: t.Iterable[Finding]) -> t.List[Finding]:
    return [f for f in findings if f.severity is Severity.ERROR]
