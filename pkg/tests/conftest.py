import textwrap
from pathlib import Path as FsPath

import pytest
from hypothesis import HealthCheck, settings

from mltx.workload import load_workload, parse_workload

settings.register_profile("mltx", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mltx")

DEMO_WORKLOADS = FsPath(__file__).resolve().parent.parent / "demos" / "workloads"


def wl(text):
    """Parse a workload written as an indented triple-quoted string."""
    return parse_workload(textwrap.dedent(text).lstrip("\n"))


def demo(name):
    return load_workload(DEMO_WORKLOADS / name)


CROSS_LOCK = """
    init /x = 0
    init /y = 0

    machine M1
      shared /x /y
      step:
        write /x := 1
      step:
        write /y := 1

    machine M2
      shared /x /y
      step:
        write /y := 2
      step:
        write /x := 2
"""


def seven_adders(n=7):
    lines = ["init /x = 0"]
    for i in range(1, n + 1):
        lines += [f"machine A{i}", "  shared /x", "  step:", "    partial /x add 1"]
    return parse_workload("\n".join(lines) + "\n")


@pytest.fixture
def cross_lock():
    return wl(CROSS_LOCK)
