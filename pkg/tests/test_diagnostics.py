import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fitnessflow.diagnostics import (
    DiagnosticsReport,
    beckner_sup,
    extinction_instability_probe,
    fit_decay_rate,
    grad_estimate_audit,
    l2_difference,
    ode_oracle,
    refinement_study,
    verify_edi,
)
from fitnessflow.errors import DimensionError, FitnessFlowError
from fitnessflow.grid import Grid
from fitnessflow.model import ExtinctionPattern, ProblemData
from fitnessflow.solver import SolverConfig, run

A2 = np.array([[2.0, 1.0], [1.0, 2.0]])


def const(g, values):
    return np.array(values, dtype=float).reshape((-1,) + (1,) * g.dim) * np.ones((1,) + g.extents)


def heterogeneous(n=32):
    g = Grid.box(n)
    (x,) = g.centers()
    m = np.stack([3 + np.sin(2 * np.pi * x), 3 + np.cos(2 * np.pi * x)])
    return g, ProblemData.on_grid(g, A2, m)


# -- EDI ------------------------------------------------------------------------------


def test_edi_holds_at_steady_state():
    g = Grid.box(16)
    d = ProblemData.on_grid(g, A2, [3.0, 3.0])
    tr = run(d, g, d.u_inf, SolverConfig(t_end=1.0, dt=0.01, snapshot_stride=10))
    res = verify_edi(tr)
    assert res.passed and res.max_abs == 0.0


def test_edi_on_transient_run():
    g, d = heterogeneous(32)
    tr = run(d, g, const(g, [0.5, 0.5]), SolverConfig(t_end=0.2, snapshot_stride=100))
    res = verify_edi(tr)
    assert res.passed
    assert res.residuals.shape == (len(tr) - 1,)


def test_edi_detects_inflated_dissipation():
    g, d = heterogeneous(32)
    tr = run(d, g, const(g, [0.5, 0.5]), SolverConfig(t_end=0.2, snapshot_stride=100))
    tr.dissipation_integral = [3.0 * v for v in tr.dissipation_integral]
    res = verify_edi(tr, tol_scale=1e-3)
    assert not res.passed and res.worst is not None


def test_edi_needs_two_snapshots():
    class T:
        times = [0.0]
        functionals = []
    with pytest.raises(FitnessFlowError):
        verify_edi(T())


# -- decay fit ------------------------------------------------------------------------


def test_decay_fit_recovers_exact_exponential():
    t = np.linspace(0.0, 5.0, 50)
    fit = fit_decay_rate((t, np.exp(-2.0 * t)), window=(0.0, 5.0))
    assert fit.gamma == pytest.approx(2.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 50


def test_decay_fit_constant_entropy():
    t = np.linspace(0.0, 5.0, 20)
    fit = fit_decay_rate((t, np.full(20, 0.3)), window=(0.0, 5.0))
    assert fit.gamma == 0.0


def test_decay_fit_default_window_drops_transient():
    t = np.linspace(0.0, 10.0, 101)
    E = np.where(t < 2.0, 5.0, np.exp(-t))
    fit = fit_decay_rate((t, E))
    assert fit.window[0] == pytest.approx(2.0)
    assert fit.gamma == pytest.approx(1.0, rel=1e-12)


def test_decay_fit_excludes_machine_floor():
    t = np.linspace(0.0, 10.0, 101)
    E = np.maximum(np.exp(-5.0 * t), 1e-300)
    E[t > 8.0] = 0.0
    fit = fit_decay_rate((t, E), window=(0.0, 10.0))
    assert fit.floor_time is not None and fit.floor_time <= 8.0
    assert fit.gamma == pytest.approx(5.0, rel=1e-9)


def test_decay_fit_too_few_points():
    fit = fit_decay_rate(([0.0, 1.0], [1.0, 0.5]), window=(0.0, 1.0))
    assert math.isnan(fit.gamma)


# -- ODE oracle -----------------------------------------------------------------------


def test_ode_oracle_logistic_closed_form():
    u = ode_oracle(([[1.0]], [1.0]), [0.5], 1.0)
    assert u[0] == pytest.approx(math.e / (1 + math.e), rel=1e-9)


@pytest.mark.parametrize("u0", [[1.0, 1.0], [0.0, 0.0]])
def test_ode_oracle_fixed_points(u0):
    u = ode_oracle((A2, [3.0, 3.0]), u0, 5.0)
    np.testing.assert_array_equal(u, u0)


def test_ode_oracle_rejects_loose_tolerance_and_varying_data():
    with pytest.raises(ValueError):
        ode_oracle(([[1.0]], [1.0]), [0.5], 1.0, rtol=1e-6)
    g, d = heterogeneous(8)
    with pytest.raises(DimensionError):
        ode_oracle(d, [0.5, 0.5], 1.0)


def test_solver_matches_oracle_on_constant_data():
    g = Grid.box(4)
    d = ProblemData.on_grid(g, A2, [3.0, 1.0])
    tr = run(d, g, const(g, [0.5, 2.0]), SolverConfig(t_end=0.5, dt=1e-4, snapshot_stride=5000))
    ref = ode_oracle(d, [0.5, 2.0], 0.5)
    err = np.max(np.abs(tr.states[-1][:, 0] - ref)) / np.max(np.abs(ref))
    assert err < 1e-3


# -- gradient audit -------------------------------------------------------------------


def test_grad_audit_constant_integrand():
    t = np.linspace(0.0, 10.0, 101)
    audit = grad_estimate_audit((t, np.full(101, 0.7)))
    assert audit.passed
    assert audit.c_fit == pytest.approx(0.7, rel=1e-12)
    assert audit.cumulative[-1] == pytest.approx(7.0)


def test_grad_audit_flags_accelerating_growth():
    t = np.linspace(0.0, 10.0, 101)
    audit = grad_estimate_audit((t, t**2))
    assert not audit.passed


def test_grad_audit_accepts_rise_then_plateau():
    t = np.linspace(0.0, 10.0, 201)
    audit = grad_estimate_audit((t, 1.0 - np.exp(-3.0 * t)))
    assert audit.passed


# -- probe ----------------------------------------------------------------------------


def test_probe_grows_reintroduced_species():
    g = Grid.box(16)
    d = ProblemData.on_grid(g, A2, [3.0, 3.0])
    rep = extinction_instability_probe(d, g, ExtinctionPattern.of({0}, 2), 1e-3, t_window=0.2)
    assert rep.am4_holds and rep.fitness_positive and rep.mass_increasing and rep.passed
    # f_1 = 3 - 2 eta - 1.5
    assert rep.min_reintroduced_fitness == pytest.approx(1.498, rel=1e-12)


def test_probe_with_zero_eta_does_not_grow():
    g = Grid.box(16)
    d = ProblemData.on_grid(g, A2, [3.0, 3.0])
    rep = extinction_instability_probe(d, g, ExtinctionPattern.of({0}, 2), 0.0, t_window=0.2)
    assert not rep.mass_increasing
    assert np.all(rep.masses == 0.0)


# -- refinement -----------------------------------------------------------------------


def test_l2_difference_restricts_fine_field():
    gc, gf = Grid.box(4), Grid.box(8)
    uf = np.repeat(np.arange(4.0), 2)[None]
    assert l2_difference(gf, uf, gc, np.arange(4.0)[None]) == 0.0
    assert l2_difference(gc, np.zeros((1, 4)), gc, np.ones((1, 4))) == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        l2_difference(Grid.box(3), np.zeros((1, 3)), gf, uf)


def test_refinement_identical_levels():
    g = Grid.box(4)
    table = refinement_study(lambda v: (g, np.ones((1, 4))), [1.0, 0.5, 0.25])
    assert table.diffs == [0.0, 0.0]
    assert table.monotone and not table.flags


def test_refinement_flags_growth():
    g = Grid.box(4)
    table = refinement_study(lambda v: (g, np.full((1, 4), 1.0 / v)), [1.0, 0.5, 0.25])
    assert not table.monotone and table.flags


def test_refinement_requires_three_levels():
    with pytest.raises(ValueError):
        refinement_study(lambda v: None, [1.0, 0.5])


def test_explicit_dt_refinement_is_first_order():
    g = Grid.box(4)
    d = ProblemData.on_grid(g, [[1.0]], [1.0])

    def sim(dt):
        tr = run(d, g, np.full((1, 4), 0.1), SolverConfig(t_end=1.0, dt=dt, snapshot_stride=10**6))
        return g, tr.states[-1]

    table = refinement_study(sim, [0.04, 0.02, 0.01, 0.005])
    assert table.monotone
    for p in table.orders:
        assert 0.9 < p < 1.1


# -- report ---------------------------------------------------------------------------


def test_report_json_and_flags():
    rep = DiagnosticsReport(edi_residuals=[0.0, 1e-9], oracle_error=float("nan"))
    assert rep.passed
    rep.flag("edi", time=0.5, detail="negative residual")
    assert not rep.passed
    data = json.loads(rep.to_json())
    for key in ("edi_residuals", "gamma_fit", "oracle_error", "beckner_sup", "grad_bound", "flags"):
        assert key in data
    assert data["oracle_error"] == "nan"
    assert data["flags"][0]["property"] == "edi"
    assert "FAIL (1 flags)" in rep.summary()


def test_beckner_sup_over_trajectory():
    g = Grid.box(8)
    d = ProblemData.on_grid(g, A2, [3.0, 3.0])
    tr = run(d, g, d.u_inf, SolverConfig(t_end=0.1, dt=0.01))
    assert beckner_sup(d, tr) is None
    g, d = heterogeneous(16)
    tr = run(d, g, const(g, [0.5, 0.5]), SolverConfig(t_end=0.1, snapshot_stride=50))
    assert 0 < beckner_sup(d, tr) < math.inf


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.5, 10.0))
def test_decay_fit_property(gamma, scale):
    t = np.linspace(0.0, 3.0, 30)
    fit = fit_decay_rate((t, scale * np.exp(-gamma * t)), window=(0.0, 3.0))
    assert fit.gamma == pytest.approx(gamma, rel=1e-9)
