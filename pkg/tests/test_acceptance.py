"""Acceptance suite: every criterion at its stated tolerance and runtime budget.

Each test prints one ``[PASS]``/``[FAIL]`` line (run with ``-s`` to see them
inline; they are also in the captured output of failures).
"""

import json

import pytest

from vphomeo.verify import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda k: f"criterion{k}")
def test_criterion(number):
    result = run_criterion(number, seed=0)
    print(result.line())
    details = json.dumps(result.details, sort_keys=True)
    assert result.passed, f"{result.line()}\n{details}"
    assert result.in_budget, f"{result.line()}: over budget"
