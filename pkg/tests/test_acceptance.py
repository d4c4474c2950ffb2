"""The eleven acceptance criteria, one test each, at their stated tolerances.

Criteria 2, 5 and 11 are expected to fail; see the README for why.
"""
import pytest

from cycleindex.verify import CRITERIA, Context, criterion

from conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def ctx():
    return Context()


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA],
                         ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(ctx, number):
    res = criterion(number, ctx)
    line = res.line()
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert res.error is None, line
    failed = [k for k, (ok, _) in res.checks.items() if not ok]
    assert res.passed and not failed, line
