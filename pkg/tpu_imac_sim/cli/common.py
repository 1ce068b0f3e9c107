import functools
import typing as t

from rich.console import Console

from tpu_imac_sim.exceptions import (
    ConfigError,
    DimensionError,
    DomainError,
    EmptyWorkloadError,
    FormatError,
    LoweringError,
    ManifestMismatchError,
    PlanError,
    TopologyParseError,
    TopologyValidationError,
    TpuImacError,
    TraceRegionError,
    TrainingDivergedError,
)
from tpu_imac_sim.logger import logger
from tpu_imac_sim.topology import Finding, NetworkTopology, Severity, validate

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_INVALID = 3
EXIT_MANIFEST = 4
EXIT_DIVERGED = 5

#: Report output goes to stdout, diagnostics go through the logger on stderr
stdout = Console(highlight=False)

_EXIT_CODES: t.Tuple[t.Tuple[t.Tuple[type, ...], int], ...] = (
    ((ManifestMismatchError,), EXIT_MANIFEST),
    ((TrainingDivergedError,), EXIT_DIVERGED),
    (
        (
            TopologyParseError,
            TopologyValidationError,
            PlanError,
            LoweringError,
            TraceRegionError,
            EmptyWorkloadError,
            DimensionError,
            DomainError,
        ),
        EXIT_INVALID,
    ),
    ((OSError, ConfigError, FormatError), EXIT_IO),
)


def exit_code_for(error: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(error, types):
            return code
    return EXIT_FAILURE


def guarded(main: t.Callable[..., int]) -> t.Callable[..., int]:
    """Turn library errors raised by a command into logged exit codes."""

    @functools.wraps(main)
    def wrapper(*args, **kwargs) -> int:
        try:
            return main(*args, **kwargs)
        except (TpuImacError, OSError) as e:
            logger.error(str(e))
            return exit_code_for(e)

    return wrapper


def check_topology(topology: NetworkTopology, hybrid: bool, array_pes: int) -> t.List[Finding]:
    """Log validation findings and raise on the first error."""
    findings = validate(topology, hybrid_mode=hybrid, array_pes=array_pes)
    for finding in findings:
        if finding.severity is Severity.WARNING:
            logger.warning(f"{topology.name}: {finding}")
    problems = [f for f in findings if f.severity is Severity.ERROR]
    if problems:
        raise TopologyValidationError(
            f"{topology.name}: " + "; ".join(str(p) for p in problems)
        )
    return findings
