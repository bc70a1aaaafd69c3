"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -rA``; the collected lines
are repeated in the "acceptance criteria" section of the terminal summary.
The long decay runs are shared by a module-scoped fixture.
"""
import itertools
import math
import time

import numpy as np
import pytest

from fitnessflow import Grid, ProblemData, SolverConfig, run, step
from fitnessflow.diagnostics import (
    beckner_sup,
    extinction_instability_probe,
    fit_decay_rate,
    ode_oracle,
    refinement_study,
    verify_edi,
)
from fitnessflow.functionals import entropy
from fitnessflow.grid import integrate
from fitnessflow.model import (
    ExtinctionPattern,
    check_am4,
    critical_entropy,
    iter_patterns,
    partial_extinction_state,
)
from fitnessflow.solver import stability_bound

A2 = np.array([[2.0, 1.0], [1.0, 2.0]])


def box(n):
    return Grid.box((n,), (1.0,))


def homogeneous(n=128):
    g = box(n)
    return g, ProblemData.on_grid(g, A2, [3.0, 3.0])


def heterogeneous(n=128):
    g = box(n)
    (x,) = g.centers()
    m = np.stack([3 + np.sin(2 * np.pi * x), 3 + np.cos(2 * np.pi * x)])
    return g, ProblemData.on_grid(g, A2, m)


def const_state(g, values):
    return np.array(values, dtype=float).reshape(-1, 1) * np.ones((1,) + g.extents)


# -- A1 ---------------------------------------------------------------------------


def test_steady_states_stay_fixed(acceptance_log):
    g, data = homogeneous(128)
    # the positivity bound is infinite at these states, so a fixed step is admissible
    cfg = SolverConfig(t_end=10.0, dt=0.01)
    starts = {"u_inf": data.u_inf}
    for p in iter_patterns(2):
        starts[str(p)] = partial_extinction_state(data, p)
    t0 = time.perf_counter()
    worst = {}
    for name, u0 in starts.items():
        traj = run(data, g, u0, cfg)
        worst[name] = max(float(np.max(np.abs(u - u0))) for u in traj.states)
        assert traj.times[-1] == 10.0
    wall = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and wall < 5.0 and np.allclose(data.u_inf, 1.0, rtol=0, atol=1e-15)
    detail = ", ".join(f"{k}: {v:.1e}" for k, v in worst.items()) + f"; {wall:.2f}s"
    acceptance_log("A1 steady states fixed (dev<=1e-12, <5s)", ok, detail)
    assert ok


# -- A2 ---------------------------------------------------------------------------


def test_entropy_dissipation_inequality(acceptance_log):
    g, data = heterogeneous(128)
    u0 = const_state(g, [0.5, 0.5])
    t0 = time.perf_counter()
    res = {}
    for dt in (2e-6, 1e-6):
        cfg = SolverConfig(t_end=0.02, dt=dt, snapshot_stride=1)
        res[dt] = verify_edi(run(data, g, u0, cfg, keep_states=False), tol_scale=10.0)
    wall = time.perf_counter() - t0
    r1, r2 = res[2e-6].max_abs, res[1e-6].max_abs
    order = math.log2(r1 / r2)
    ok = res[2e-6].passed and res[1e-6].passed and order >= 0.9 and wall < 30.0
    detail = f"max|r| {r1:.3e} -> {r2:.3e}, order {order:.3f}; all intervals within tol; {wall:.1f}s"
    acceptance_log("A2 EDI residuals (tol 10(dt+h^2)(1+E), order>=0.9, <30s)", ok, detail)
    assert ok


# -- A3 / A7 (shared long runs) -------------------------------------------------------


@pytest.fixture(scope="module")
def decay_runs():
    out = {}
    for n, stride in ((128, 1000), (256, 4000)):
        g, data = heterogeneous(n)
        u0 = const_state(g, [0.5, 0.5])
        traj = run(data, g, u0, SolverConfig(t_end=20.0, snapshot_stride=stride))
        out[n] = (g, data, u0, traj)
    return out


@pytest.mark.slow
def test_exponential_decay(acceptance_log, decay_runs):
    g, data, u0, traj = decay_runs[128]
    e0 = entropy(data, g, u0)
    ce = critical_entropy(data, g)
    subcritical = e0 < ce.value
    fits = {n: fit_decay_rate(r[3], window=(2.0, 20.0)) for n, r in decay_runs.items()}
    e = traj.energies
    drop = e[-1] / e[0]
    g128, g256 = fits[128].gamma, fits[256].gamma
    stable = abs(g256 - g128) / g128 < 0.10
    checks = {
        "E(u0)<E*": subcritical,
        "gamma>0": g128 > 0 and g256 > 0,
        "R2>=0.99": fits[128].r2 >= 0.99 and fits[256].r2 >= 0.99,
        "E(20)<=1e-4E(0)": drop <= 1e-4,
        "gamma stable 10%": stable,
    }
    ok = all(checks.values())
    floors = ", ".join(f"{n}: {f.floor_time}" for n, f in fits.items())
    detail = (
        f"E(u0)={e0:.6f} E*={ce.value:.6f}; gamma 128={g128:.4f} 256={g256:.4f}; "
        f"R2 128={fits[128].r2:.4f} 256={fits[256].r2:.4f}; E(20)/E(0)={drop:.2e}; "
        f"machine-floor times {floors}; failed: {[k for k, v in checks.items() if not v] or 'none'}"
    )
    acceptance_log("A3 exponential decay on [2,20]", ok, detail)
    assert ok


# -- A4 ---------------------------------------------------------------------------


def test_ode_oracle_equivalence(acceptance_log):
    g = box(16)
    data = ProblemData.on_grid(g, A2, [3.0, 3.0])
    u0 = [0.5, 2.0]
    t0 = time.perf_counter()
    ref = ode_oracle(data, u0, 1.0)
    errs = {}
    for dt in (1e-3, 5e-4):
        traj = run(data, g, const_state(g, u0), SolverConfig(t_end=1.0, dt=dt, snapshot_stride=10**6),
                   keep_states=False)
        final = traj.states[-1].reshape(2, -1)
        assert np.ptp(final, axis=1).max() == 0.0
        errs[dt] = float(np.max(np.abs(final[:, 0] - ref)) / np.max(np.abs(ref)))
    wall = time.perf_counter() - t0
    order = math.log2(errs[1e-3] / errs[5e-4])
    ok = errs[1e-3] <= 1e-3 and order >= 0.9 and wall < 5.0
    detail = f"rel err dt=1e-3: {errs[1e-3]:.3e}, dt=5e-4: {errs[5e-4]:.3e}, order {order:.3f}; {wall:.2f}s"
    acceptance_log("A4 ODE oracle (<=1e-3, halving, <5s)", ok, detail)
    assert ok


# -- A5 ---------------------------------------------------------------------------


def _det_laplace(mat):
    """Cofactor expansion along the first row; independent of LAPACK."""
    n = len(mat)
    if n == 1:
        return mat[0][0]
    return sum(
        (-1) ** j * mat[0][j] * _det_laplace([row[:j] + row[j + 1:] for row in mat[1:]])
        for j in range(n)
    )


def test_critical_entropy_and_kappa(acceptance_log):
    g, data = homogeneous(128)
    ce = critical_entropy(data, g)
    rep = check_am4(data)
    # brute-force oracle over the three patterns with plain Python arithmetic
    a = [[2.0, 1.0], [1.0, 2.0]]
    m = [3.0, 3.0]
    uinf = [1.0, 1.0]
    oracle_e = {}
    for ext in ({0}, {1}, {0, 1}):
        surv = [i for i in range(2) if i not in ext]
        u = [0.0, 0.0]
        if len(surv) == 1:
            u[surv[0]] = m[surv[0]] / a[surv[0]][surv[0]]
        d = [u[i] - uinf[i] for i in range(2)]
        oracle_e[frozenset(ext)] = 0.5 * sum(a[i][j] * d[i] * d[j] for i in range(2) for j in range(2))
    e_star = min(oracle_e.values())
    kappas = []
    for r in range(0, 3):
        for sub in itertools.combinations(range(2), r):
            for j in range(2):
                if j in sub:
                    continue
                rows = [[a[i][k] for k in sub] + [m[i]] for i in sub] + [[a[j][k] for k in sub] + [m[j]]]
                kappas.append(_det_laplace(rows))
    kappa = min(kappas)
    ok = (
        abs(ce.value - 0.75) <= 1e-10
        and abs(ce.value - e_star) <= 1e-10
        and len(ce.pattern.extinct) == 1
        and abs(rep.kappa - 3.0) <= 1e-10
        and abs(rep.kappa - kappa) <= 1e-10
    )
    detail = f"E*={ce.value!r} at {ce.pattern} (oracle {e_star!r}); kappa={rep.kappa!r} (oracle {kappa!r})"
    acceptance_log("A5 critical entropy 0.75 and kappa 3", ok, detail)
    assert ok


# -- A6 ---------------------------------------------------------------------------


def _random_instance(rng, n_cells=32):
    g = box(n_cells)
    n = int(rng.integers(1, 4))
    q = rng.normal(size=(n, n))
    a = q @ q.T + rng.uniform(0.1, 2.0) * np.eye(n)
    if rng.random() < 0.3:
        # per-cell matrices
        cells = []
        for _ in range(n_cells):
            qc = q + 0.1 * rng.normal(size=(n, n))
            cells.append(qc @ qc.T + 0.5 * np.eye(n))
        a = np.moveaxis(np.array(cells), 0, -1)
    (x,) = g.centers()
    m = np.stack([rng.uniform(0.5, 3.0) + rng.uniform(0, 1) * np.sin(2 * np.pi * (x + rng.random()))
                  for _ in range(n)])
    u = rng.uniform(0.0, 3.0, size=(n, n_cells))
    u[rng.random(u.shape) < 0.15] = 0.0
    return g, ProblemData.on_grid(g, a, m), u


def test_positivity_and_mass_identity(acceptance_log):
    rng = np.random.default_rng(20240611)
    worst_rel, min_u, n_steps = 0.0, math.inf, 0
    for k in range(1000):
        g, data, u = _random_instance(rng)
        cfg = SolverConfig(
            t_end=1.0,
            reaction_scheme="patankar" if k % 2 else "explicit",
            delta=float(rng.choice([0.0, 1e-3])),
            truncation_M=float(rng.choice([math.inf, 2.0])),
        )
        for _ in range(3):
            dt = stability_bound(data, g, u, cfg)
            dt = min(dt, 1.0)
            new, react = step(data, g, u, cfg, dt=dt, return_reaction=True)
            min_u = min(min_u, float(new.min()))
            dmass = np.atleast_1d(integrate(g, new - u))
            rmass = dt * np.atleast_1d(integrate(g, react))
            scale = np.atleast_1d(integrate(g, np.abs(u) + np.abs(new))) + dt * np.atleast_1d(
                integrate(g, np.abs(react)))
            worst_rel = max(worst_rel, float(np.max(np.abs(dmass - rmass) / scale)))
            u = new
            n_steps += 1
    ok = min_u >= 0.0 and worst_rel <= 1e-12
    detail = f"{n_steps} steps on 1000 instances; min u {min_u:.3e}; worst mass-identity rel {worst_rel:.2e}"
    acceptance_log("A6 positivity and mass identity", ok, detail)
    assert ok


# -- A7 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_beckner_ratio_stable(acceptance_log, decay_runs):
    sups = {n: beckner_sup(r[1], r[3]) for n, r in decay_runs.items()}
    finite = all(s is not None and math.isfinite(s) for s in sups.values())
    change = abs(sups[256] - sups[128]) / sups[128] if finite else math.inf
    ok = finite and change < 0.20
    acceptance_log("A7 Beckner sup finite, <20% change 128->256", ok,
                   f"sup 128={sups[128]:.6f} 256={sups[256]:.6f}, change {change:.2%}")
    assert ok


# -- A8 ---------------------------------------------------------------------------


def test_extinction_instability(acceptance_log):
    g, data = homogeneous(128)
    p = ExtinctionPattern.of({0}, 2)
    rep = extinction_instability_probe(data, g, p, 1e-3, t_window=0.5)
    # f_1(u0) = 3 - 2 * 1e-3 - 1 * 1.5 at u0 = (1e-3, 1.5)
    expected = 3 - 2 * 1e-3 - 1.5
    ok = rep.fitness_positive and rep.mass_increasing and abs(rep.min_reintroduced_fitness - expected) < 1e-12
    m = rep.masses[:, 0]
    detail = (f"min f_1(u0)={rep.min_reintroduced_fitness:.6f} (expected {expected:.6f}); "
              f"mass_1 {m[0]:.3e} -> {m[-1]:.3e} over {len(m)} snapshots, strictly increasing={rep.mass_increasing}")
    acceptance_log("A8 extinction instability probe", ok, detail)
    assert ok


# -- A9 ---------------------------------------------------------------------------


def test_regularization_limits(acceptance_log):
    g, data = heterogeneous(128)
    u0 = const_state(g, [0.5, 0.5])
    t_end = 0.5

    def final(**kw):
        traj = run(data, g, u0, SolverConfig(t_end=t_end, snapshot_stride=10**7, **kw), keep_states=False)
        return traj.states[-1]

    deltas = refinement_study(lambda d: (g, final(delta=d)), [1e-2, 1e-3, 1e-4], "delta")
    umax0 = float(u0.max())
    ms = [2 * umax0, 10 * umax0, math.inf]
    finals = {M: final(truncation_M=M) for M in ms}
    mstudy = refinement_study(lambda M: (g, finals[M]), ms, "M")
    u_inf_run = run(data, g, u0, SolverConfig(t_end=t_end, snapshot_stride=1000))
    range_max = max(float(u.max()) for u in u_inf_run.states)
    neutral = np.array_equal(finals[10 * umax0], finals[math.inf]) and 10 * umax0 > range_max
    ok = deltas.monotone and mstudy.monotone and neutral
    detail = (
        f"delta diffs {[f'{d:.3e}' for d in deltas.diffs]}; M={ms} diffs {[f'{d:.3e}' for d in mstudy.diffs]}; "
        f"max u over run {range_max:.4f}; M={10 * umax0:g} bit-identical to inf: {neutral}"
    )
    acceptance_log("A9 regularization limits", ok, detail)
    assert ok

