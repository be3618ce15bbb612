import pytest

from pmsplit.kfs import Geometry, mkfs, mount
from pmsplit.pmem import PmemDevice
from pmsplit.usplit import Config

SMALL = Config(map_size=64 << 10, staging_count=2, staging_size=256 << 10, log_size=64 << 10)


def new_fs(capacity: int = 8 << 20, **geometry):
    dev = PmemDevice(capacity, tracing=False)
    mkfs(dev, Geometry.for_capacity(capacity, **geometry) if geometry else None)
    return mount(dev)


@pytest.fixture
def fs():
    return new_fs()


@pytest.fixture
def small_config():
    return SMALL


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    verdicts = getattr(acceptance, "VERDICTS", [])
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(verdicts):
            terminalreporter.write_line(line)
