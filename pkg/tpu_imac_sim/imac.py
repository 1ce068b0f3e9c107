"""Functional model of the in-memory analog computing (IMAC) engine.

Each ternary weight is held by a differential pair of resistive devices
``(G+, G-)``. An input vector drives the crossbar rows, each column's
``I+ - I-`` is normalized by ``v_read * (g_on - g_off)`` in the differential
amplifier, and an analog sigmoid neuron produces the column output. Layers
chain in the analog domain; only the last layer's outputs pass through the
ADC.

Weight matrices follow the ``y = W @ x`` convention (``outputs x inputs``).
The programmed device grid is the transpose: physical rows are inputs and
physical columns are outputs.
"""

import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from tpu_imac_sim.defaults import (
    DEFAULT_ADC_BITS,
    DEFAULT_G_OFF,
    DEFAULT_G_ON,
    DEFAULT_NEURON_SLOPE,
    DEFAULT_SUB_COLS,
    DEFAULT_SUB_ROWS,
    DEFAULT_V_READ,
    DEFAULT_VARIATION_SIGMA,
    VARIATION_CLIP_SIGMAS,
)
from tpu_imac_sim.exceptions import ConfigError, DimensionError, DomainError, FormatError
from tpu_imac_sim.helper import atomic_write_bytes, ceil_div

TERNARY_HEADER = np.dtype([("rows", "<u8"), ("cols", "<u8")])


@dataclass(frozen=True)
class CrossbarConfig:
    sub_rows: int = DEFAULT_SUB_ROWS
    sub_cols: int = DEFAULT_SUB_COLS
    g_on: float = DEFAULT_G_ON
    g_off: float = DEFAULT_G_OFF
    v_read: float = DEFAULT_V_READ
    neuron_slope: float = DEFAULT_NEURON_SLOPE
    adc_bits: int = DEFAULT_ADC_BITS
    variation_sigma: float = DEFAULT_VARIATION_SIGMA

    def __post_init__(self):
        if not self.g_on > self.g_off > 0:
            raise ConfigError("conductances must satisfy g_on > g_off > 0")
        if self.sub_rows < 1 or self.sub_cols < 1:
            raise ConfigError("subarray dimensions must be >= 1")
        if self.adc_bits < 1:
            raise ConfigError("adc_bits must be >= 1")
        if self.variation_sigma < 0:
            raise ConfigError("variation_sigma must be >= 0")
        if self.v_read <= 0 or self.neuron_slope <= 0:
            raise ConfigError("v_read and neuron_slope must be positive")

    @property
    def adc_levels(self) -> int:
        """Highest ADC code, ``2**bits - 1``."""
        return 2**self.adc_bits - 1

    @property
    def lsb(self) -> float:
        return 1.0 / self.adc_levels


@dataclass(frozen=True)
class ConductancePair:
    g_plus: float
    g_minus: float


class TernaryMatrix:
    """Immutable matrix with entries in {-1, 0, +1}."""

    def __init__(self, values):
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise DimensionError(f"ternary matrix must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (-1, 0, 1)).all():
            raise DomainError("ternary matrix entries must be -1, 0 or +1")
        self._values = arr.astype(np.int8)
        self._values.flags.writeable = False

    @classmethod
    def from_array(cls, values) -> "TernaryMatrix":
        return cls(values)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "TernaryMatrix":
        return cls(np.zeros((rows, cols), dtype=np.int8))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def rows(self) -> int:
        return self._values.shape[0]

    @property
    def cols(self) -> int:
        return self._values.shape[1]

    @property
    def shape(self) -> t.Tuple[int, int]:
        return self._values.shape

    def __eq__(self, other):
        if not isinstance(other, TernaryMatrix):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash((self.shape, self._values.tobytes()))

    def __repr__(self):
        return f"TernaryMatrix(rows={self.rows}, cols={self.cols})"


@dataclass(frozen=True, eq=False)
class Crossbar:
    config: CrossbarConfig
    g_plus: np.ndarray
    g_minus: np.ndarray

    @property
    def layer_dims(self) -> t.Tuple[int, int]:
        """``(inputs, outputs)`` of the layer held by this crossbar."""
        return self.g_plus.shape

    @property
    def inputs(self) -> int:
        return self.g_plus.shape[0]

    @property
    def outputs(self) -> int:
        return self.g_plus.shape[1]

    def pair(self, i: int, j: int) -> ConductancePair:
        return ConductancePair(float(self.g_plus[i, j]), float(self.g_minus[i, j]))

    def decoded(self) -> np.ndarray:
        """Effective weights of the device grid, ``inputs x outputs``."""
        cfg = self.config
        return np.ascontiguousarray((self.g_plus - self.g_minus) / (cfg.g_on - cfg.g_off))


def encode_ternary(w, cfg: CrossbarConfig) -> ConductancePair:
    if w == 1:
        return ConductancePair(cfg.g_on, cfg.g_off)
    if w == -1:
        return ConductancePair(cfg.g_off, cfg.g_on)
    if w == 0:
        return ConductancePair(cfg.g_off, cfg.g_off)
    raise DomainError(f"cannot encode weight {w!r}; expected -1, 0 or +1")


def decode(pair: ConductancePair, cfg: CrossbarConfig) -> float:
    return (pair.g_plus - pair.g_minus) / (cfg.g_on - cfg.g_off)


def program_crossbar(
    weights: TernaryMatrix, cfg: CrossbarConfig, seed: t.Optional[int] = None
) -> Crossbar:
    """Encode a ternary layer onto device pairs.

    With ``cfg.variation_sigma > 0`` every device conductance is scaled by an
    independent factor drawn from ``N(1, sigma)`` and clipped to
    ``1 +/- 6 sigma`` (and kept positive).

    Args:
        weights: Layer weights, ``outputs x inputs``.
        cfg: Device and array parameters.
        seed: Seed for the variation generator. Required when sigma > 0.

    Returns:
        Crossbar: Device grid of shape ``inputs x outputs``.

    Raises:
        ConfigError: If variation is requested without a seed.
    """
    grid = weights.values.T
    g_plus = np.where(grid == 1, cfg.g_on, cfg.g_off).astype(np.float64)
    g_minus = np.where(grid == -1, cfg.g_on, cfg.g_off).astype(np.float64)
    sigma = cfg.variation_sigma
    if sigma > 0:
        if seed is None:
            raise ConfigError("a seed is required when variation_sigma > 0")
        rng = np.random.default_rng(seed)
        low = max(1.0 - VARIATION_CLIP_SIGMAS * sigma, 1e-6)
        high = 1.0 + VARIATION_CLIP_SIGMAS * sigma
        factors = np.clip(rng.normal(1.0, sigma, size=(2,) + grid.shape), low, high)
        g_plus *= factors[0]
        g_minus *= factors[1]
    g_plus.flags.writeable = False
    g_minus.flags.writeable = False
    return Crossbar(config=cfg, g_plus=g_plus, g_minus=g_minus)


def _as_inputs(x, expected: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != expected:
        raise DimensionError(f"expected {expected} inputs, got shape {x.shape}")
    return x


def mvm(xbar: Crossbar, x) -> np.ndarray:
    """Normalized column outputs ``sum_i x_i * decode(pair_ij)``.

    ``x`` is one input vector or a batch of row vectors. At zero variation
    the result is the exact ternary product ``W @ x``.
    """
    x = _as_inputs(x, xbar.inputs)
    return x @ xbar.decoded()


def neuron(u, cfg: CrossbarConfig):
    return expit(cfg.neuron_slope * np.asarray(u, dtype=np.float64))


def adc_quantize(y, cfg: CrossbarConfig) -> np.ndarray:
    """Round to the nearest of ``2**bits`` uniform levels over [0, 1]."""
    y = np.asarray(y, dtype=np.float64)
    if not ((y >= 0) & (y <= 1)).all():
        raise DomainError("ADC input must lie in [0, 1]")
    levels = cfg.adc_levels
    return np.floor(y * levels + 0.5) / levels


def _check_sign_bits(sign_bits, expected: int) -> np.ndarray:
    x = _as_inputs(sign_bits, expected)
    if not np.isin(x, (-1.0, 1.0)).all():
        raise DomainError("FC block inputs must be -1 or +1")
    return x


def _check_chain(xbars: t.Sequence[Crossbar]) -> None:
    if not xbars:
        raise DimensionError("forward_fc needs at least one crossbar")
    for prev, nxt in zip(xbars, xbars[1:]):
        if prev.outputs != nxt.inputs:
            raise DimensionError(
                f"crossbar chain mismatch: {prev.outputs} outputs feed {nxt.inputs} inputs"
            )


def forward_logits(xbars: t.Sequence[Crossbar], sign_bits) -> np.ndarray:
    """Column sums of the last crossbar, before its neurons.

    The sigmoid is monotone, so these rank the classes the same way the
    neuron outputs do without saturating to equal values.
    """
    _check_chain(xbars)
    h = _check_sign_bits(sign_bits, xbars[0].inputs)
    for xbar in xbars[:-1]:
        h = neuron(mvm(xbar, h), xbar.config)
    return mvm(xbars[-1], h)


def forward_fc(xbars: t.Sequence[Crossbar], sign_bits, adc: bool = True) -> np.ndarray:
    """Run the analog FC block on sign-binarized inputs.

    Hidden activations stay continuous between layers. With ``adc=False`` the
    final neuron outputs are returned before quantization.
    """
    h = neuron(forward_logits(xbars, sign_bits), xbars[-1].config)
    return adc_quantize(h, xbars[-1].config) if adc else h


def _dense(w: TernaryMatrix) -> np.ndarray:
    # same layout as Crossbar.decoded so both paths hit the same matmul
    return np.ascontiguousarray(w.values.T, dtype=np.float64)


def reference_logits(
    weights: t.Sequence[TernaryMatrix], sign_bits, cfg: CrossbarConfig
) -> np.ndarray:
    """Pure-arithmetic counterpart of :func:`forward_logits`."""
    if not weights:
        raise DimensionError("reference_fc needs at least one layer")
    for prev, nxt in zip(weights, weights[1:]):
        if prev.rows != nxt.cols:
            raise DimensionError(
                f"layer chain mismatch: {prev.rows} outputs feed {nxt.cols} inputs"
            )
    h = _check_sign_bits(sign_bits, weights[0].cols)
    for w in weights[:-1]:
        h = neuron(h @ _dense(w), cfg)
    return h @ _dense(weights[-1])


def reference_fc(
    weights: t.Sequence[TernaryMatrix], sign_bits, cfg: CrossbarConfig, adc: bool = True
) -> np.ndarray:
    """Pure-arithmetic counterpart of :func:`forward_fc`."""
    h = neuron(reference_logits(weights, sign_bits, cfg), cfg)
    return adc_quantize(h, cfg) if adc else h


def subarrays_required(layer_dims: t.Tuple[int, int], cfg: CrossbarConfig) -> int:
    inputs, outputs = layer_dims
    if inputs < 1 or outputs < 1:
        raise DimensionError(f"layer dimensions must be positive, got {layer_dims}")
    return ceil_div(inputs, cfg.sub_rows) * ceil_div(outputs, cfg.sub_cols)


def write_ternary(path: t.Union[str, Path], matrix: TernaryMatrix) -> Path:
    """Write a ternary matrix as a 16-byte header plus int8 row-major data."""
    header = np.array([(matrix.rows, matrix.cols)], dtype=TERNARY_HEADER)
    data = np.ascontiguousarray(matrix.values, dtype="<i1")
    return atomic_write_bytes(path, header.tobytes() + data.tobytes())


def read_ternary(path: t.Union[str, Path]) -> TernaryMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < TERNARY_HEADER.itemsize:
        raise FormatError(f"{path}: ternary file shorter than its header")
    header = np.frombuffer(raw, dtype=TERNARY_HEADER, count=1)[0]
    rows, cols = int(header["rows"]), int(header["cols"])
    body = raw[TERNARY_HEADER.itemsize :]
    if len(body) != rows * cols:
        raise FormatError(
            f"{path}: header declares {rows}x{cols} entries, found {len(body)} bytes"
        )
    values = np.frombuffer(body, dtype="<i1").reshape(rows, cols)
    try:
        return TernaryMatrix(values)
    except DomainError as e:
        raise FormatError(f"{path}: {e}") from None
