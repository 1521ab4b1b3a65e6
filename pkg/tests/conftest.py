import numpy as np
import pytest

# criterion number -> list of (passed, detail)
ACCEPTANCE: dict = {}

SEEDS = [11, 23, 37, 41, 59]


def record(criterion: int, passed: bool, detail: str = "") -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        results = ACCEPTANCE[crit]
        ok = all(p for p, _ in results)
        details = [d for p, d in results if d and (not ok or len(results) == 1)]
        if len(results) > 1:
            passed = sum(p for p, _ in results)
            details = [f"{passed}/{len(results)} checks"] + [d for p, d in results if not p]
        tr.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
