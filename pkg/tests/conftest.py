import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccxsim.machine import Machine
from ccxsim.runtime import HostRuntime

from helpers import small_config


@pytest.fixture
def machine() -> Machine:
    return Machine(small_config())

@pytest.fixture
def ccx_machine() -> Machine:
    return Machine(small_config(mode="ccx"))


@pytest.fixture
def runtime(machine) -> HostRuntime:
    return HostRuntime(machine)


@pytest.fixture
def fixture_dir(tmp_path_factory) -> Path:
    """Session-scoped directory of generated fixture manifests."""
    return tmp_path_factory.mktemp("fixtures")
