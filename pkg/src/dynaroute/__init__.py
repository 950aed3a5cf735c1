"""Co-simulator of safety-constrained platoon control and mobility-aware
packet routing over a lossy vehicular network."""

from .config import ScenarioConfig, default_config, load_config
from .harness import MetricsLog, compute_e2e_delay, compute_throughput, export, run

__version__ = "0.1.0"

__all__ = [
    "MetricsLog",
    "ScenarioConfig",
    "compute_e2e_delay",
    "compute_throughput",
    "default_config",
    "export",
    "load_config",
    "run",
    "__version__",
]
