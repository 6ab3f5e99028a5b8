import numpy as np
import pytest

from roughpme.engine.errors import EmptyTallyError, KineticError, SupportViolationError, XiRangeError
from roughpme.signals.roughpath import sample_brownian, zero_path
from roughpme.systems import pde
from roughpme.systems.characteristics import FlowParams
from roughpme.systems.coefficients import build_coefficient, zero_coefficient
from roughpme.systems.kinetic import (
    SeparableTestFunction, XiGrid, defect_tally, kinetic_field, kinetic_function, kinetic_l1_identity,
    kinetic_report, poincare_ratio, singular_moment, sobolev_diagnostics, weak_form_residual, xi_grid_for,
)
from roughpme.systems.pde import RecordPolicy, SolverParams

HEAT = SolverParams(m=1.0, dt=1e-3)


@pytest.fixture
def heat_run(dom):
    T = 0.02
    return pde.solve(pde.sine(dom), T, HEAT, zero_path(1, T), zero_coefficient(),
                     RecordPolicy.uniform(0.0, T, 3, cell_tallies=True))


def test_kinetic_function_values():
    assert kinetic_function(0.5, 0.2) == 1
    assert kinetic_function(0.5, 0.7) == 0
    assert kinetic_function(-0.5, -0.2) == -1
    assert kinetic_function(-0.5, 0.2) == 0
    assert kinetic_function(0.5, 0.0) == 0
    assert kinetic_function(np.array([1.0, -1.0]), 0.5).tolist() == [1, 0]


def test_xi_grid_validation():
    with pytest.raises(KineticError):
        XiGrid(1.0, 3)
    with pytest.raises(KineticError):
        XiGrid(0.0, 4)
    grid = XiGrid(2.0, 8)
    assert grid.dxi == pytest.approx(0.5)
    assert grid.refine().bins == 16
    assert grid.bin_of(np.array([-2.0, 0.1, 2.0])).tolist() == [0, 4, 7]
    with pytest.raises(XiRangeError):
        grid.bin_of(np.array([2.5]))
    assert xi_grid_for(np.array([0.5, -1.0]), margin=0.5).xi_max == pytest.approx(2.5)


def test_chi_integrates_back_to_u(dom):
    u = pde.signed_bump(dom, 0.3, 0.15, 0.8)
    grid = XiGrid(1.0, 64)
    recovered = kinetic_field(u, grid).integrate()
    assert np.max(np.abs(recovered - u.values)) <= grid.dxi
    with pytest.raises(KineticError):
        kinetic_field(u.values, grid)


def test_kinetic_l1_identity(dom):
    grid = XiGrid(1.0, 64)
    exact, gap = kinetic_l1_identity(pde.sine(dom, amplitude=0.9), pde.signed_bump(dom, 0.4, 0.2, 0.6), grid)
    assert exact
    assert gap <= 2.0 * grid.dxi


def test_defect_tally(heat_run):
    tally = defect_tally(heat_run, HEAT)
    assert tally.steps == heat_run.steps
    assert tally.q_total == pytest.approx(HEAT.q_prefactor * np.sum(heat_run.gradient_energy), rel=1e-12)
    assert tally.p_total == 0.0
    p, q = tally.binned()
    assert np.sum(q) == pytest.approx(tally.q_total)


def test_defect_tally_needs_cell_tallies(dom):
    traj = pde.solve(pde.sine(dom), 0.01, HEAT, zero_path(1, 0.01), zero_coefficient())
    with pytest.raises(KineticError):
        defect_tally(traj, HEAT)


def test_singular_moments(heat_run):
    tally = defect_tally(heat_run, HEAT, XiGrid(2.0, 32))
    assert singular_moment(tally, 1.0) == pytest.approx(tally.total)
    assert singular_moment(tally, 0.5) > 0.0
    with pytest.raises(KineticError):
        singular_moment(tally, 1.5)


def test_empty_tally(dom):
    traj = pde.solve(pde.sine(dom), 0.0, HEAT, zero_path(1, 0.01), zero_coefficient(),
                     RecordPolicy(cell_tallies=True))
    tally = defect_tally(traj, HEAT)
    with pytest.raises(EmptyTallyError):
        singular_moment(tally, 1.0)
    assert kinetic_report(traj, HEAT).singular_moments == {}


def test_poincare_ratio_of_the_first_mode(dom):
    assert poincare_ratio(pde.sine(dom).values, dom, 1.0) == pytest.approx(1.0 / np.pi ** 2, rel=0.01)
    assert poincare_ratio(np.zeros(dom.cells), dom, 2.0) == 0.0


def test_sobolev_exponent(heat_run):
    assert sobolev_diagnostics(heat_run, HEAT).p_m == 2.0
    assert sobolev_diagnostics(heat_run, SolverParams(m=2.0)).p_m == pytest.approx(1.5)


def test_kinetic_report(heat_run):
    report = kinetic_report(heat_run, HEAT)
    assert report.q_total > 0.0
    assert set(report.singular_moments) == {1.0, 0.5, 0.25}
    assert report.poincare_ratio_max == pytest.approx(1.0 / np.pi ** 2, rel=0.02)
    data = report.to_dict()
    assert set(data['singular_moments']) == {'1.0', '0.5', '0.25'}


def test_weak_residual_detects_a_perturbed_solution(dom, heat_run):
    rho = SeparableTestFunction(0.5, 0.25, 0.9, 0.8)
    grid = XiGrid(2.0, 256)
    path = zero_path(1, 0.02)
    base = weak_form_residual(heat_run, rho, 0.0, 0.02, path, zero_coefficient(), FlowParams(), grid)

    values = heat_run.values.copy()
    values[heat_run.steps // 2:] += pde.bump(dom, 0.5, 0.15, 0.5).values
    perturbed = weak_form_residual(heat_run.with_values(values), rho, 0.0, 0.02, path, zero_coefficient(),
                                   FlowParams(), grid)
    assert perturbed > 3.0 * base


def test_weak_residual_under_transport(dom):
    T = 0.02
    path = sample_brownian(5, 1, 16, T)
    c = build_coefficient("basis-product", dom, basis=["sin2_1"], amplitude=0.25)
    traj = pde.solve(pde.bump(dom, 0.5, 0.2), T, SolverParams(m=2.0, dt=1e-4), path, c,
                     RecordPolicy(cell_tallies=True))
    rho = SeparableTestFunction(0.5, 0.25, 0.5, 0.45)
    grid = XiGrid(2.0, 128)
    base = weak_form_residual(traj, rho, 0.0, T, path, c, FlowParams(), grid)
    assert np.isfinite(base)

    values = traj.values.copy()
    values[traj.steps // 2:] += pde.bump(dom, 0.5, 0.15, 0.5).values
    perturbed = weak_form_residual(traj.with_values(values), rho, 0.0, T, path, c, FlowParams(), grid)
    assert perturbed > 3.0 * base


def test_weak_residual_preconditions(heat_run):
    path = zero_path(1, 0.02)
    c = zero_coefficient()
    with pytest.raises(KineticError):
        weak_form_residual(heat_run, SeparableTestFunction(0.5, 0.25, 0.5, 0.5), 0.02, 0.0, path, c, FlowParams())
    with pytest.raises(KineticError):
        weak_form_residual(heat_run, SeparableTestFunction(0.5, 0.25, 0.5, 0.5), 0.0, 0.0105, path, c,
                           FlowParams())
    with pytest.raises(SupportViolationError):
        weak_form_residual(heat_run, SeparableTestFunction(0.05, 0.2, 0.5, 0.5), 0.0, 0.02, path, c,
                           FlowParams(), XiGrid(2.0, 32))
