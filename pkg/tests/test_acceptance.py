"""Acceptance gate: every criterion at its stated tolerance.

Run with ``pytest -s tests/test_acceptance.py`` to see the one-line
PASS/FAIL verdicts as they complete. Training-based criteria share one
artifact cache (three seeds x up to four topologies), so the heavy work
runs once per session; expect roughly 30-45 minutes on one CPU core.
The same criteria back the ``promptseg selftest`` command.
"""

import pytest

from promptseg.acceptance import AcceptanceSuite


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    return AcceptanceSuite(tmp_path_factory.mktemp("acceptance"))


def _check(result):
    print()
    print(result.line(), flush=True)
    assert result.passed, f"{result.name}: {result.detail}"


def test_gradient_suite(suite):
    _check(suite.c_gradient_suite())


def test_hfc_invariants(suite):
    _check(suite.c_hfc_invariants())


def test_gating_algebra(suite):
    _check(suite.c_gating_algebra())


def test_zero_adaptor_equivalence(suite):
    _check(suite.c_zero_adaptor())


def test_metric_oracles(suite):
    _check(suite.c_metric_oracles())


def test_optimizer_oracle(suite):
    _check(suite.c_optimizer_oracle())


def test_freeze_contract(suite):
    _check(suite.c_freeze_contract())


def test_determinism_and_restartability(suite):
    _check(suite.c_determinism_restart())


def test_directional_miniature(suite):
    _check(suite.c_directional())


def test_ablation_miniature(suite):
    _check(suite.c_ablation())
