"""Output-stationary systolic array model.

A GEMM ``(m x k) @ (k x n)`` is tiled onto an ``R x C`` array in folds. The
row edge streams the im2col ifmap windows, the column edge streams filter
columns, and every PE keeps one output accumulator. A fold of ``r x c``
outputs with inner length ``k`` takes ``k + 2r + c - 2`` cycles: the skewed
wavefront reaches the far PE after ``k + r + c - 2`` cycles and the results
then drain down one row per cycle. Folds run back to back.
"""

import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tpu_imac_sim.defaults import (
    DEFAULT_ARRAY_COLS,
    DEFAULT_ARRAY_ROWS,
    DEFAULT_FILTER_OFFSET,
    DEFAULT_IFMAP_OFFSET,
    DEFAULT_OFMAP_OFFSET,
    DEFAULT_WORD_BYTES,
    ORACLE_MAX_MACS,
    ORACLE_MAX_PES,
    TRACE_SUFFIX,
)
from tpu_imac_sim.exceptions import (
    ConfigError,
    LoweringError,
    OracleScaleError,
    TraceRegionError,
)
from tpu_imac_sim.helper import atomic_open
from tpu_imac_sim.logger import logger
from tpu_imac_sim.topology import (
    GemmShape,
    LayerKind,
    LayerSpec,
    depthwise_gemm,
    output_shape,
    to_gemm,
)

TRACE_HEADER = "cycle,dir,region,address,bytes"
REGIONS = ("ifmap", "filter", "ofmap")


@dataclass(frozen=True)
class SystolicConfig:
    rows: int = DEFAULT_ARRAY_ROWS
    cols: int = DEFAULT_ARRAY_COLS
    ifmap_offset: int = DEFAULT_IFMAP_OFFSET
    filter_offset: int = DEFAULT_FILTER_OFFSET
    ofmap_offset: int = DEFAULT_OFMAP_OFFSET
    word_bytes: int = DEFAULT_WORD_BYTES

    def __post_init__(self):
        for name in ("rows", "cols", "word_bytes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("ifmap_offset", "filter_offset", "ofmap_offset"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def pes(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Fold:
    row_tile: int
    col_tile: int
    k: int
    row_base: int
    col_base: int

    @property
    def macs(self) -> int:
        return self.row_tile * self.col_tile * self.k


@dataclass(frozen=True)
class CycleReport:
    cycles: int
    mac_ops: int
    utilization: float
    reads_elems: int
    writes_elems: int

    @classmethod
    def idle(cls, cycles: int = 0) -> "CycleReport":
        return cls(cycles=cycles, mac_ops=0, utilization=0.0, reads_elems=0, writes_elems=0)

    @classmethod
    def from_counts(
        cls, cycles: int, mac_ops: int, reads: int, writes: int, cfg: SystolicConfig
    ) -> "CycleReport":
        utilization = mac_ops / (cfg.pes * cycles) if cycles else 0.0
        return cls(cycles, mac_ops, utilization, reads, writes)


def fold_schedule(gemm: GemmShape, cfg: SystolicConfig) -> t.List[Fold]:
    """Tile the ``m x n`` output onto the array, row-major over tiles."""
    folds = []
    for row_base in range(0, gemm.m, cfg.rows):
        r = min(cfg.rows, gemm.m - row_base)
        for col_base in range(0, gemm.n, cfg.cols):
            c = min(cfg.cols, gemm.n - col_base)
            folds.append(Fold(r, c, gemm.k, row_base, col_base))
    return folds


def fold_cycles(fold: Fold) -> int:
    return fold.k + 2 * fold.row_tile + fold.col_tile - 2


def gemm_cycles(gemm: GemmShape, cfg: SystolicConfig) -> CycleReport:
    """Cycle count, MACs and operand traffic of one GEMM.

    Args:
        gemm: Lowered layer.
        cfg: Array geometry.

    Returns:
        CycleReport: Folds are serialized, reads are ``k * (r + c)`` per fold
        and every output element is written once.
    """
    cycles = reads = 0
    for fold in fold_schedule(gemm, cfg):
        cycles += fold_cycles(fold)
        reads += fold.k * (fold.row_tile + fold.col_tile)
    return CycleReport.from_counts(cycles, gemm.macs, reads, gemm.m * gemm.n, cfg)


def _replay_fold(a: np.ndarray, b: np.ndarray) -> t.Tuple[int, np.ndarray]:
    """Shift operands through an ``r x c`` PE grid one cycle at a time.

    Row ``i`` receives ``a[i, s]`` at its left edge on cycle ``i + s`` and
    column ``j`` receives ``b[s, j]`` at its top edge on cycle ``j + s``.
    Operands move one PE per cycle and a PE accumulates whenever both of its
    registers hold valid operands. Once every PE has accumulated ``k``
    products, the grid drains through its bottom edge one row per cycle.

    Returns:
        The elapsed cycles and the drained ``r x c`` result.
    """
    r, k = a.shape
    c = b.shape[1]
    a_reg = np.zeros((r, c), dtype=a.dtype)
    b_reg = np.zeros((r, c), dtype=b.dtype)
    a_ok = np.zeros((r, c), dtype=bool)
    b_ok = np.zeros((r, c), dtype=bool)
    acc = np.zeros((r, c), dtype=np.result_type(a, b))
    done = np.zeros((r, c), dtype=np.int64)
    rows, cols = np.arange(r), np.arange(c)

    cycle = 0
    while done.min() < k:
        a_reg[:, 1:], a_ok[:, 1:] = a_reg[:, :-1], a_ok[:, :-1]
        b_reg[1:, :], b_ok[1:, :] = b_reg[:-1, :], b_ok[:-1, :]
        s_row = cycle - rows
        a_ok[:, 0] = (s_row >= 0) & (s_row < k)
        a_reg[:, 0] = np.where(a_ok[:, 0], a[rows, np.clip(s_row, 0, k - 1)], 0)
        s_col = cycle - cols
        b_ok[0, :] = (s_col >= 0) & (s_col < k)
        b_reg[0, :] = np.where(b_ok[0, :], b[np.clip(s_col, 0, k - 1), cols], 0)
        fire = a_ok & b_ok
        acc += np.where(fire, a_reg * b_reg, 0)
        done += fire
        cycle += 1

    drained = np.zeros_like(acc)
    for step in range(r):
        drained[r - 1 - step] = acc[-1]
        acc[1:] = acc[:-1].copy()
        acc[0] = 0
        cycle += 1
    return cycle, drained


def simulate_gemm_events(gemm: GemmShape, cfg: SystolicConfig, seed: int = 0) -> int:
    """Replay a GEMM on the array cycle by cycle and return the elapsed cycles.

    The replay pushes real operands through the grid and checks the drained
    outputs against ``A @ B``, so it is the reference the closed form in
    :func:`fold_cycles` is tested against.

    Raises:
        OracleScaleError: If the array or the GEMM is too large to replay.
    """
    if cfg.pes > ORACLE_MAX_PES or gemm.macs > ORACLE_MAX_MACS:
        raise OracleScaleError(
            f"oracle scale exceeded: {cfg.rows}x{cfg.cols} array, {gemm.macs} MACs "
            f"(limits {ORACLE_MAX_PES} PEs, {ORACLE_MAX_MACS} MACs)"
        )
    rng = np.random.default_rng(seed)
    a = rng.integers(-8, 9, size=(gemm.m, gemm.k), dtype=np.int64)
    b = rng.integers(-8, 9, size=(gemm.k, gemm.n), dtype=np.int64)
    expected = a @ b
    total = 0
    for fold in fold_schedule(gemm, cfg):
        rs = slice(fold.row_base, fold.row_base + fold.row_tile)
        cs = slice(fold.col_base, fold.col_base + fold.col_tile)
        cycles, out = _replay_fold(a[rs, :], b[:, cs])
        if not np.array_equal(out, expected[rs, cs]):
            raise RuntimeError(f"systolic replay produced a wrong product for fold {fold}")
        total += cycles
    return total


def layer_cycles(
    layer: LayerSpec, cfg: SystolicConfig, aux_cost_per_elem: int = 0
) -> CycleReport:
    """Cycles a layer spends on the array.

    Pooling and flatten layers run on a unit outside the array and cost
    ``aux_cost_per_elem`` per output element. DepthwiseConv layers run one
    single-column GEMM per channel.
    """
    if layer.kind in (LayerKind.CONV, LayerKind.DENSE):
        return gemm_cycles(to_gemm(layer), cfg)
    if layer.kind is LayerKind.DEPTHWISE_CONV:
        per_channel = gemm_cycles(depthwise_gemm(layer), cfg)
        ch = layer.channels_in
        return CycleReport.from_counts(
            per_channel.cycles * ch,
            per_channel.mac_ops * ch,
            per_channel.reads_elems * ch,
            per_channel.writes_elems * ch,
            cfg,
        )
    return CycleReport.idle(aux_cost_per_elem * layer.output_elements)


class TraceRecord(t.NamedTuple):
    cycle: int
    dir: str
    region: str
    address: int
    bytes: int

    def to_row(self) -> str:
        return f"{self.cycle},{self.dir},{self.region},{self.address},{self.bytes}"


@dataclass(frozen=True)
class _Lowering:
    """One GEMM of a layer with separable element-index tables.

    Element ``A[p, s]`` of the streamed ifmap lives at ifmap index
    ``a_row[p] + a_col[s]``; ``B[s, j]`` at ``b_row[s] + b_col[j]``;
    output ``(p, j)`` at ``o_row[p] + o_col[j]``.
    """

    gemm: GemmShape
    a_row: np.ndarray
    a_col: np.ndarray
    b_row: np.ndarray
    b_col: np.ndarray
    o_row: np.ndarray
    o_col: np.ndarray


def _window_tables(layer: LayerSpec) -> t.Tuple[np.ndarray, np.ndarray]:
    h_out, w_out, _ = output_shape(layer)
    c = layer.channels_in
    oy, ox = np.divmod(np.arange(h_out * w_out), w_out)
    origin = ((oy * layer.stride) * layer.ifmap_w + ox * layer.stride) * c
    fy, fx = np.divmod(np.arange(layer.filter_h * layer.filter_w), layer.filter_w)
    tap = (fy * layer.ifmap_w + fx) * c
    return origin, tap


def _lowerings(layer: LayerSpec) -> t.Iterator[_Lowering]:
    if layer.kind is LayerKind.DENSE:
        gemm = to_gemm(layer)
        n = gemm.n
        yield _Lowering(
            gemm,
            np.zeros(1, dtype=np.int64), np.arange(gemm.k),
            np.arange(gemm.k) * n, np.arange(n),
            np.zeros(1, dtype=np.int64), np.arange(n),
        )
    elif layer.kind is LayerKind.CONV:
        gemm = to_gemm(layer)
        origin, tap = _window_tables(layer)
        c = layer.channels_in
        a_col = (tap[:, None] + np.arange(c)[None, :]).ravel()
        yield _Lowering(
            gemm,
            origin, a_col,
            np.arange(gemm.k) * gemm.n, np.arange(gemm.n),
            np.arange(gemm.m) * gemm.n, np.arange(gemm.n),
        )
    elif layer.kind is LayerKind.DEPTHWISE_CONV:
        gemm = depthwise_gemm(layer)
        origin, tap = _window_tables(layer)
        c = layer.channels_in
        for ch in range(c):
            yield _Lowering(
                gemm,
                origin + ch, tap,
                np.arange(gemm.k) * c, np.array([ch]),
                np.arange(gemm.m) * c, np.array([ch]),
            )
    else:
        raise LoweringError(f"{layer.name}: no GEMM lowering for {layer.kind.value}")


def region_extents(layer: LayerSpec, cfg: SystolicConfig) -> t.Dict[str, t.Tuple[int, int]]:
    """Byte ranges ``[start, end)`` each region occupies for this layer."""
    if layer.kind is LayerKind.DENSE:
        ifmap, filt = layer.channels_in, layer.channels_in * layer.num_filters
    elif layer.kind is LayerKind.DEPTHWISE_CONV:
        ifmap = layer.ifmap_h * layer.ifmap_w * layer.channels_in
        filt = layer.filter_h * layer.filter_w * layer.channels_in
    else:
        ifmap = layer.ifmap_h * layer.ifmap_w * layer.channels_in
        filt = layer.filter_h * layer.filter_w * layer.channels_in * layer.num_filters
    sizes = {"ifmap": ifmap, "filter": filt, "ofmap": layer.output_elements}
    offsets = {
        "ifmap": cfg.ifmap_offset,
        "filter": cfg.filter_offset,
        "ofmap": cfg.ofmap_offset,
    }
    return {
        region: (offsets[region], offsets[region] + sizes[region] * cfg.word_bytes)
        for region in REGIONS
    }


def check_regions(layer: LayerSpec, cfg: SystolicConfig) -> None:
    extents = region_extents(layer, cfg)
    for i, first in enumerate(REGIONS):
        for second in REGIONS[i + 1 :]:
            (a0, a1), (b0, b1) = extents[first], extents[second]
            if a0 < b1 and b0 < a1:
                raise TraceRegionError(
                    f"{layer.name}: {first} region [{a0}, {a1}) overlaps "
                    f"{second} region [{b0}, {b1})"
                )


_REGION_CODE = {"ifmap": 0, "filter": 1, "ofmap": 2}


def _fold_block(
    low: _Lowering, fold: Fold, start: int, cfg: SystolicConfig
) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cycle, region code and byte address of every access in one fold."""
    r, c, k = fold.row_tile, fold.col_tile, fold.k
    i = np.arange(r)
    j = np.arange(c)
    s = np.arange(k)
    p = fold.row_base + i
    q = fold.col_base + j

    a_cycle = (i[:, None] + s[None, :]).ravel()
    a_addr = (low.a_row[p][:, None] + low.a_col[None, :]).ravel()
    b_cycle = (s[:, None] + j[None, :]).ravel()
    b_addr = (low.b_row[:, None] + low.b_col[q][None, :]).ravel()
    # bottom row leaves first
    drain = k + r + c - 2
    o_cycle = np.repeat(drain + (r - 1 - i), c)
    o_addr = (low.o_row[p][:, None] + low.o_col[q][None, :]).ravel()

    cycles = np.concatenate([a_cycle, b_cycle, o_cycle]) + start
    codes = np.concatenate(
        [np.zeros(a_cycle.size, np.int8), np.ones(b_cycle.size, np.int8), np.full(o_cycle.size, 2, np.int8)]
    )
    offsets = np.array([cfg.ifmap_offset, cfg.filter_offset, cfg.ofmap_offset], dtype=np.int64)
    addrs = offsets[codes] + np.concatenate([a_addr, b_addr, o_addr]).astype(np.int64) * cfg.word_bytes
    order = np.lexsort((np.arange(cycles.size), codes, cycles))
    return cycles[order], codes[order], addrs[order]


def _iter_blocks(layer: LayerSpec, cfg: SystolicConfig):
    check_regions(layer, cfg)
    start = 0
    for low in _lowerings(layer):
        for fold in fold_schedule(low.gemm, cfg):
            yield _fold_block(low, fold, start, cfg)
            start += fold_cycles(fold)


def iter_traces(layer: LayerSpec, cfg: SystolicConfig) -> t.Iterator[TraceRecord]:
    """Stream the SRAM/DRAM accesses of a layer in cycle order.

    Raises:
        LoweringError: For layers that do not run on the array.
        TraceRegionError: If the three address regions overlap.
    """
    regions = REGIONS
    for cycles, codes, addrs in _iter_blocks(layer, cfg):
        for cycle, code, addr in zip(cycles.tolist(), codes.tolist(), addrs.tolist()):
            yield TraceRecord(
                cycle, "W" if code == 2 else "R", regions[code], addr, cfg.word_bytes
            )


def generate_traces(layer: LayerSpec, cfg: SystolicConfig) -> t.List[TraceRecord]:
    return list(iter_traces(layer, cfg))


def trace_filename(layer: LayerSpec) -> str:
    return f"{layer.name}{TRACE_SUFFIX}"


def write_traces(layer: LayerSpec, cfg: SystolicConfig, out_dir: t.Union[str, Path]) -> Path:
    """Write ``<layer>.trace.csv`` into ``out_dir`` atomically."""
    path = Path(out_dir) / trace_filename(layer)
    records = 0
    with atomic_open(path, "w") as f:
        f.write(TRACE_HEADER + "\n")
        for record in iter_traces(layer, cfg):
            f.write(record.to_row() + "\n")
            records += 1
    logger.info(f"Wrote {records} trace records to {path}")
    return path
