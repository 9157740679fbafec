import os
from pathlib import Path

import numpy as np
import pytest

GOLDEN_DIR = Path(__file__).parent / "goldens"
REGEN_ENV = "SEPGROUND_REGEN_GOLDENS"

# One line per acceptance criterion, printed in the terminal summary so the
# verdicts are visible even inside a long pytest run.  test_acceptance.py
# appends via record_criterion().
ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(number: int, passed: bool, detail: str):
    ACCEPTANCE_RESULTS.append(
        f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)


def check_golden(name: str, arrays: dict, atol: float = 1e-6):
    """Compare arrays against tests/goldens/<name>.npz.

    Set SEPGROUND_REGEN_GOLDENS=1 to rewrite the stored file instead
    (used once after the surrounding behavior is verified by the other
    tests, then committed).
    """
    path = GOLDEN_DIR / f"{name}.npz"
    if os.environ.get(REGEN_ENV):
        GOLDEN_DIR.mkdir(exist_ok=True)
        np.savez(path, **{k: np.asarray(v) for k, v in arrays.items()})
        pytest.skip(f"regenerated golden {name}")
    if not path.exists():
        pytest.fail(f"missing golden file {path}; run with {REGEN_ENV}=1 to create")
    stored = np.load(path)
    assert set(stored.files) == set(arrays), "golden key set changed"
    for key, value in arrays.items():
        np.testing.assert_allclose(
            np.asarray(value), stored[key], atol=atol, rtol=0, err_msg=f"{name}/{key}"
        )
