import subprocess
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("script, args, expect", [
    ("cross_lock.py", [], '"serializable": true'),
    ("seven_adders.py", [], "final store: {'x': 7}"),
    ("transfer.py", [], "serializable=True"),
    ("strict_vs_safe.py", ["5"], "safe  : 5 runs"),
])
def test_demo_runs(script, args, expect):
    proc = subprocess.run([sys.executable, str(DEMOS / script), *args], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert expect in proc.stdout
    assert "serializable=False" not in proc.stdout
