"""The twelve acceptance criteria at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line; the lines are repeated in the
pytest terminal summary.  Criteria that cannot be met are left failing.
"""

import pytest

from sheetcontrol import acceptance

from conftest import ACCEPTANCE_LINES


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CHECKS))
def test_criterion(number):
    res = acceptance.CHECKS[number]()
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    for row in res.rows:
        print(f"    {row.metric}: {row.value!r} target={row.target!r} tol={row.tolerance!r} "
              f"pass={row.passed if row.gating else '-'}")
    assert res.passed, line
