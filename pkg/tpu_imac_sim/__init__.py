from importlib.metadata import PackageNotFoundError, version

from tpu_imac_sim.topology import (
    GemmShape,
    LayerKind,
    LayerSpec,
    NetworkTopology,
    bundled_topology,
    load_topology,
    parse_topology,
)
from tpu_imac_sim.systolic import SystolicConfig
from tpu_imac_sim.imac import CrossbarConfig

try:
    __version__: str = version("tpu-imac-sim")
except PackageNotFoundError:
    __version__ = "0.0.0"
