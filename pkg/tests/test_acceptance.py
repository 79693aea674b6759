"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7-11 run epsilon sweeps on meshes up to 1024 x 1024; the whole file
takes roughly ten minutes on one core.
"""

import pytest

from quasihom import acceptance


@pytest.fixture(scope="module", autouse=True)
def _workdir(tmp_path_factory):
    acceptance._WORKDIR = tmp_path_factory.mktemp("acceptance")
    yield
    acceptance._WORKDIR = None


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    outcome = acceptance.run_criterion(number)
    with capsys.disabled():
        print("\n" + outcome.line())
    assert outcome.passed, outcome.detail
