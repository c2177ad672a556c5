"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``[PASS]``/``[FAIL]`` line; run
``python tests/test_acceptance.py`` for the summary without pytest.
"""

import pytest

from cmckit import acceptance


@pytest.mark.parametrize("fn", acceptance.CRITERIA, ids=lambda f: f.__name__)
def test_criterion(fn, capsys):
    res = acceptance.run_criterion(fn)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.detail


if __name__ == "__main__":
    acceptance.run_all()
