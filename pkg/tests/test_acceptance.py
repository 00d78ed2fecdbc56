"""Acceptance suite: every exit criterion at its pinned tolerance.

Each criterion is implemented once in metastable.checks (the same registry
backs the ``verify`` CLI subcommand); this module runs all of them at their
default, frozen parameters and prints one pass/fail line per criterion.

Expected wall time is dominated by the Monte Carlo criteria (7, 8, 9); the
whole suite stays well inside the stated budgets on a single worker.
"""

import pytest

from metastable.checks import CHECKS

BUDGET_SECONDS = {
    "spectral_identities": 1.0,
    "prefactor_arithmetic": 1.0,
    "test_function_harmonicity": 1.0,
    "capacity_vs_alpha": 60.0,
    "numerator_vs_laplace": 60.0,
    "end_to_end_ratio": 60.0,
    "monte_carlo_ek": 600.0,
    "start_insensitivity": 600.0,
    "committor_plateau_envelope": 600.0,
    "lyapunov_suites": 30.0,
    "linearization_covariance": 5.0,
    "zero_noise_flow": 30.0,
    "tightness_probe": 30.0,
    "gibbs_marginals": 60.0,
    "derivative_consistency": 5.0,
}


@pytest.mark.parametrize("name", list(CHECKS))
def test_acceptance_criterion(name, capsys):
    result = CHECKS[name]()
    with capsys.disabled():
        print(f"\n{result.line()}")
    assert result.passed, f"{name} failed: {result.details}"
    assert result.runtime <= BUDGET_SECONDS[name], (
        f"{name} exceeded its runtime budget: {result.runtime:.1f}s"
    )
