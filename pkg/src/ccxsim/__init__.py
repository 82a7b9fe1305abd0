"""ccxsim: deterministic simulator of SGX-style enclaves on a CCA-style machine."""

from .config import Config
from .machine import Machine
from .manifest import EnclaveManifest
from .runtime import HostRuntime
from .scenario import ScenarioRunner, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Config",
    "EnclaveManifest",
    "HostRuntime",
    "Machine",
    "ScenarioRunner",
    "run_scenario",
    "__version__",
]
