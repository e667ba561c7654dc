"""Acceptance gate: one check per criterion, run at the stated tolerances.

Each test records its one-line verdict; ``conftest.py`` prints the lines at
the end of the session whether the checks pass or fail.
"""

import pytest

from dish import verify

LINES = {}


def record(number, result):
    LINES[number] = result.line()
    print(result.line())
    return result


def test_criterion_1_contraction():
    res = record(1, verify.check_contraction())
    assert res.passed, res.detail
    assert res.seconds < 60


@pytest.mark.slow
def test_criterion_2_exact_convergence():
    res = record(2, verify.check_exact_convergence())
    assert res.passed, res.detail


def test_criterion_3_engine_equivalence():
    res = record(3, verify.check_engine_equivalence())
    assert res.passed, res.detail


def test_criterion_4_special_cases():
    res = record(4, verify.check_special_cases())
    assert res.passed, res.detail


def test_criterion_5_dual_calculus():
    res = record(5, verify.check_dual_calculus())
    assert res.passed, res.detail


def test_criterion_6_bound_suite():
    res = record(6, verify.check_bound_suite())
    assert res.passed, res.detail


@pytest.mark.slow
def test_criterion_7_reproduction():
    res = record(7, verify.check_reproduction())
    assert res.passed, res.detail


def test_criterion_8_propositions():
    res = record(8, verify.check_propositions())
    assert res.passed, res.detail
