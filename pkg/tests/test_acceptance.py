"""End-to-end acceptance criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary so they survive output capture. Simulation reports are memoized per
process, so the trend checks at the bottom reuse the criterion runs.
"""

import pytest

from catmap import acceptance
from catmap.acceptance import format_line, run_criterion

pytestmark = pytest.mark.slow

RESULT_LINES: list[str] = []


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    res = run_criterion(number)
    line = format_line(res)
    RESULT_LINES.append(line)
    print(line)
    assert res.passed, line


def test_kappa_error_shrinks_with_dimension():
    big = acceptance._scenario("kappa1_table", 1, p=1600, delta=4.0, kappa1=0.5, reps=50)
    small = acceptance._scenario("kappa1_table", 1, p=100, delta=2.0, kappa1=0.5, reps=50)
    assert big.summary[0]["abs_err_mean"] < small.summary[0]["abs_err_mean"]


def _fdr_summary():
    rep = acceptance._scenario("fdr_grid", 1, p=200, n=500, r_grid=[0.2], signal_grid=[1.0], reps=100)
    return {r["method"]: r for r in rep.summary}


def test_single_split_controls_fdr():
    ds = _fdr_summary()["DS"]
    assert ds["fdr"] <= 0.15 and ds["power"] >= 0.3
