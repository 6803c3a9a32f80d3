"""The ten acceptance criteria, one test each; every run prints its pass/fail line."""

import pytest

from formflow.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(number, acceptance_lines):
    result = run_criterion(number)
    line = result.line()
    print(line)
    acceptance_lines.append(line)
    assert result.passed, line
