"""Layer scheduling and end-to-end accounting for TPU-only and TPU+IMAC runs.

Conv layers cost their systolic-array cycles. In hybrid mode each Dense
layer runs on the IMAC engine in one cycle and the Conv-to-FC handoff is
free, because the sign bits leave the array PEs directly. Pooling and
flatten layers run on the auxiliary unit.
"""

import enum
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

from slugify import slugify

from tpu_imac_sim.defaults import RRAM_BITS_PER_WEIGHT, SRAM_BYTES_PER_PARAM
from tpu_imac_sim.exceptions import EmptyWorkloadError, PlanError
from tpu_imac_sim.helper import atomic_write_text, ceil_div, ensure_dir, write_json
from tpu_imac_sim.imac import CrossbarConfig, subarrays_required
from tpu_imac_sim.logger import logger
from tpu_imac_sim.systolic import SystolicConfig, layer_cycles
from tpu_imac_sim.topology import (
    LayerKind,
    NetworkTopology,
    Severity,
    param_count,
    validate,
)

MB = 2**20
IMAC_LAYER_CYCLES = 1
HANDOFF_CYCLES = 0

LAYER_COLUMNS = ("layer", "unit", "cycles", "utilization")
SUMMARY_COLUMNS = (
    "total_cycles",
    "baseline_cycles",
    "speedup",
    "sram_mb",
    "rram_mb",
    "total_mb",
    "reduction_pct",
)


class Unit(str, enum.Enum):
    TPU = "TPU"
    IMAC = "IMAC"
    AUX = "AUX"


class Mode(str, enum.Enum):
    TPU_ONLY = "tpu_only"
    HYBRID = "hybrid"

    @classmethod
    def from_cli(cls, value: str) -> "Mode":
        """Accept the command-line spellings ``tpu`` and ``tpu-imac``."""
        aliases = {"tpu": cls.TPU_ONLY, "tpu-imac": cls.HYBRID}
        return aliases[value] if value in aliases else cls(value)


@dataclass(frozen=True)
class ExecutionPlan:
    mode: Mode
    assignments: t.Tuple[t.Tuple[str, Unit], ...]
    handoff_index: t.Optional[int]

    def unit_of(self, layer_name: str) -> Unit:
        return dict(self.assignments)[layer_name]


@dataclass(frozen=True)
class LayerResult:
    layer: str
    kind: LayerKind
    unit: Unit
    cycles: int
    utilization: float
    mac_ops: int = 0
    reads_elems: int = 0
    writes_elems: int = 0
    subarrays: t.Optional[int] = None


@dataclass(frozen=True)
class MemoryReport:
    sram_bytes: int
    rram_bytes: int
    baseline_sram_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.sram_bytes + self.rram_bytes

    @property
    def reduction(self) -> float:
        if not self.baseline_sram_bytes:
            return 0.0
        return 1.0 - self.total_bytes / self.baseline_sram_bytes


@dataclass(frozen=True)
class SimulationReport:
    topology: str
    mode: Mode
    per_layer: t.Tuple[LayerResult, ...]
    total_cycles: int
    baseline_total_cycles: int
    memory: MemoryReport
    warnings: t.Tuple[str, ...] = ()
    accuracy: t.Optional[t.Dict[str, t.Optional[float]]] = field(default=None, compare=False)

    @property
    def speedup(self) -> float:
        return speedup(self)


def plan(topology: NetworkTopology, mode: Mode) -> ExecutionPlan:
    """Assign every layer to a unit.

    Raises:
        PlanError: If the topology has structural errors for ``mode``.
    """
    mode = Mode(mode)
    problems = [
        f for f in validate(topology, hybrid_mode=mode is Mode.HYBRID)
        if f.severity is Severity.ERROR
    ]
    if problems:
        raise PlanError(
            f"{topology.name} cannot be planned in {mode.value} mode: "
            + "; ".join(str(p) for p in problems)
        )
    assignments = []
    for layer in topology.layers:
        if not layer.kind.is_compute:
            unit = Unit.AUX
        elif layer.kind is LayerKind.DENSE and mode is Mode.HYBRID:
            unit = Unit.IMAC
        else:
            unit = Unit.TPU
        assignments.append((layer.name, unit))
    handoff = topology.first_dense_index() if mode is Mode.HYBRID else None
    return ExecutionPlan(mode=mode, assignments=tuple(assignments), handoff_index=handoff)


def _layer_results(
    topology: NetworkTopology,
    execution: ExecutionPlan,
    sys_cfg: SystolicConfig,
    xbar_cfg: CrossbarConfig,
    aux_cost_per_elem: int,
) -> t.List[LayerResult]:
    results = []
    for layer, (_, unit) in zip(topology.layers, execution.assignments):
        if unit is Unit.IMAC:
            results.append(
                LayerResult(
                    layer.name,
                    layer.kind,
                    unit,
                    IMAC_LAYER_CYCLES,
                    0.0,
                    mac_ops=layer.channels_in * layer.num_filters,
                    subarrays=subarrays_required(
                        (layer.channels_in, layer.num_filters), xbar_cfg
                    ),
                )
            )
            continue
        report = layer_cycles(layer, sys_cfg, aux_cost_per_elem)
        results.append(
            LayerResult(
                layer.name,
                layer.kind,
                unit,
                report.cycles,
                report.utilization,
                report.mac_ops,
                report.reads_elems,
                report.writes_elems,
            )
        )
    return results


def memory_report(topology: NetworkTopology, mode: Mode) -> MemoryReport:
    """FP32 SRAM storage against FP32 SRAM plus 2-bit RRAM storage."""
    mode = Mode(mode)
    total = topology.total_params()
    baseline = SRAM_BYTES_PER_PARAM * total
    if mode is Mode.TPU_ONLY:
        return MemoryReport(sram_bytes=baseline, rram_bytes=0, baseline_sram_bytes=baseline)
    fc = sum(param_count(layer) for layer in topology.dense_layers())
    return MemoryReport(
        sram_bytes=SRAM_BYTES_PER_PARAM * (total - fc),
        rram_bytes=ceil_div(fc * RRAM_BITS_PER_WEIGHT, 8),
        baseline_sram_bytes=baseline,
    )


def run(
    topology: NetworkTopology,
    sys_cfg: SystolicConfig,
    xbar_cfg: CrossbarConfig,
    mode: Mode,
    aux_cost_per_elem: int = 0,
    accuracy: t.Optional[t.Dict[str, t.Optional[float]]] = None,
) -> SimulationReport:
    """Simulate a workload in ``mode`` against its TPU-only baseline.

    Args:
        topology: Workload.
        sys_cfg: Systolic array geometry.
        xbar_cfg: IMAC configuration, used for subarray accounting.
        mode: ``tpu_only`` or ``hybrid``.
        aux_cost_per_elem: Cycles per output element of pool/flatten layers.
        accuracy: Optional step accuracies to embed, e.g. from an export manifest.

    Returns:
        SimulationReport: Per-layer results and totals.
    """
    mode = Mode(mode)
    execution = plan(topology, mode)
    per_layer = _layer_results(topology, execution, sys_cfg, xbar_cfg, aux_cost_per_elem)
    total = sum(r.cycles for r in per_layer) + (
        HANDOFF_CYCLES if execution.handoff_index is not None else 0
    )
    if mode is Mode.TPU_ONLY:
        baseline = total
    else:
        baseline_plan = plan(topology, Mode.TPU_ONLY)
        baseline = sum(
            r.cycles
            for r in _layer_results(topology, baseline_plan, sys_cfg, xbar_cfg, aux_cost_per_elem)
        )
    warnings = tuple(
        str(f)
        for f in validate(topology, hybrid_mode=mode is Mode.HYBRID, array_pes=sys_cfg.pes)
        if f.severity is Severity.WARNING
    )
    return SimulationReport(
        topology=topology.name,
        mode=mode,
        per_layer=tuple(per_layer),
        total_cycles=total,
        baseline_total_cycles=baseline,
        memory=memory_report(topology, mode),
        warnings=warnings,
        accuracy=accuracy,
    )


def speedup(report: SimulationReport) -> float:
    if report.total_cycles <= 0:
        raise EmptyWorkloadError(f"{report.topology}: workload takes zero cycles")
    return report.baseline_total_cycles / report.total_cycles


def summary(report: SimulationReport) -> t.Dict[str, t.Any]:
    mem = report.memory
    return {
        "total_cycles": report.total_cycles,
        "baseline_cycles": report.baseline_total_cycles,
        "speedup": round(speedup(report), 4),
        "sram_mb": round(mem.sram_bytes / MB, 3),
        "rram_mb": round(mem.rram_bytes / MB, 3),
        "total_mb": round(mem.total_bytes / MB, 3),
        "reduction_pct": round(100 * mem.reduction, 3),
    }


def report_to_dict(report: SimulationReport) -> t.Dict[str, t.Any]:
    return {
        "topology": report.topology,
        "mode": report.mode.value,
        "layers": [
            {
                "layer": r.layer,
                "kind": r.kind.value,
                "unit": r.unit.value,
                "cycles": r.cycles,
                "utilization": round(r.utilization, 6),
                "mac_ops": r.mac_ops,
                "reads_elems": r.reads_elems,
                "writes_elems": r.writes_elems,
                "subarrays": r.subarrays,
            }
            for r in report.per_layer
        ],
        "summary": summary(report),
        "memory_bytes": {
            "sram": report.memory.sram_bytes,
            "rram": report.memory.rram_bytes,
            "baseline_sram": report.memory.baseline_sram_bytes,
        },
        "warnings": list(report.warnings),
        "accuracy": report.accuracy,
    }


def report_to_csv(report: SimulationReport) -> str:
    lines = [",".join(LAYER_COLUMNS)]
    for r in report.per_layer:
        lines.append(f"{r.layer},{r.unit.value},{r.cycles},{r.utilization:.6f}")
    s = summary(report)
    columns = list(SUMMARY_COLUMNS)
    values = [
        str(s["total_cycles"]),
        str(s["baseline_cycles"]),
        f"{s['speedup']:.4f}",
        f"{s['sram_mb']:.3f}",
        f"{s['rram_mb']:.3f}",
        f"{s['total_mb']:.3f}",
        f"{s['reduction_pct']:.3f}",
    ]
    for key in ("accuracy_step1", "accuracy_step2"):
        value = (report.accuracy or {}).get(key)
        if value is not None:
            columns.append(key)
            values.append(f"{value:.4f}")
    lines += ["", ",".join(columns), ",".join(values)]
    return "\n".join(lines) + "\n"


def report_basename(report: SimulationReport) -> str:
    return slugify(f"{report.topology} {report.mode.value}")


def write_report(report: SimulationReport, out_dir: t.Union[str, Path]) -> t.Tuple[Path, Path]:
    """Write the CSV and JSON forms of a report; nothing is written on error."""
    out_dir = ensure_dir(out_dir)
    csv_text = report_to_csv(report)
    data = report_to_dict(report)
    base = report_basename(report)
    csv_path = atomic_write_text(out_dir / f"{base}.csv", csv_text)
    json_path = write_json(out_dir / f"{base}.json", data)
    logger.info(f"Wrote {csv_path} and {json_path}")
    return csv_path, json_path


COMPARE_COLUMNS = ("model", "baseline_cycles", "hybrid_cycles", "speedup", "reduction_pct")


def compare_row(
    topology: NetworkTopology,
    sys_cfg: SystolicConfig,
    xbar_cfg: CrossbarConfig,
    aux_cost_per_elem: int = 0,
    accuracy: t.Optional[t.Dict[str, t.Optional[float]]] = None,
) -> t.Dict[str, t.Any]:
    """One comparison row: hybrid run against its embedded TPU-only baseline."""
    report = run(topology, sys_cfg, xbar_cfg, Mode.HYBRID, aux_cost_per_elem, accuracy)
    row = {
        "model": topology.name,
        "baseline_cycles": report.baseline_total_cycles,
        "hybrid_cycles": report.total_cycles,
        "speedup": round(speedup(report), 4),
        "reduction_pct": round(100 * report.memory.reduction, 3),
    }
    if accuracy:
        row.update(accuracy)
    return row
