from pathlib import Path

import numpy as np
import pytest

from roughpme.domain.geometry import Domain
from roughpme.engine.config import InitialDataSection, load_config, parse_config
from roughpme.engine.constants import ScenarioKind
from roughpme.engine.errors import ConfigError, LadderError, ScenarioError
from roughpme.engine.scenario_manager import ScenarioManager
from roughpme.experiments.report import Report, load_reports, write_reports
from roughpme.experiments.scenarios import (
    RUNNERS, Scenario, build_initial, prepare, run_contraction, run_cocycle, run_estimate_suite,
    run_flow_stability, run_heat_oracle, run_noise_continuity, run_positivity_mass, run_scenario,
    run_vanishing_viscosity,
)
from roughpme.systems import pde

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
NOISY = {'path': {'source': "brownian", 'steps': 16},
         'coefficient': {'kind': "basis-product", 'basis': ["sin2_1"], 'amplitude': 0.5}}
SMALL_PDE = {'cells': 32, 'T': 0.01, 'dt': 1e-3, 'record_count': 5}


def make_scenario(kind, pde_section=None, **sections):
    data = {
        'scenario': {'id': kind, 'kind': kind},
        'pde': {**SMALL_PDE, **(pde_section or {})},
        'path': {'source': "zero"},
        'coefficient': {'kind': "zero"},
    }
    data.update(sections)
    return Scenario.from_config(parse_config(data))


def check_names(report):
    return {check.name for check in report.checks}


def test_report_check_semantics():
    report = Report("demo", ScenarioKind.CONTRACTION, 0)
    report.check('tight', 1.0, 2.0)
    report.check('informational', 5.0, 1.0, asserted=False)
    assert report.passed
    report.check('loose', 3.0, 2.0)
    assert not report.passed
    assert report.failures() == ['loose']
    assert report.check('forced', 0.0, 1.0, passed=False).passed is False


def test_reports_round_trip_through_files(tmp_path):
    reports = []
    for seed in (2, 1):
        report = Report("demo", ScenarioKind.COCYCLE, seed, provenance={'seed': seed})
        report.check('cocycle', 0.5, 1.0)
        report.measure('mismatch', np.float64(0.5))
        report.add_series('l1', [0.0, 0.5], [1.0, 0.25])
        reports.append(report)
    write_reports(reports, tmp_path)
    loaded = load_reports(tmp_path)
    assert [r.seed for r in loaded] == [1, 2]
    assert loaded[0].checks[0].name == 'cocycle'
    assert loaded[0].measured == {'mismatch': 0.5}
    assert [row.value for row in loaded[1].series] == [1.0, 0.25]
    assert (tmp_path / "series.csv").read_text().splitlines()[0] == "scenario,seed,key,t,value"


def test_load_reports_errors(tmp_path):
    with pytest.raises(ScenarioError):
        load_reports(tmp_path / "missing.json")


def test_scenario_validation_rejects_bad_coefficients():
    with pytest.raises(ConfigError):
        make_scenario(ScenarioKind.CONTRACTION, coefficient={'basis': ["sin_1"]})


def test_initial_data_uses_interval_fractions():
    dom = Domain(-1.0, 1.0, 64)
    built = build_initial(InitialDataSection(center=0.5, width=0.2), dom)
    assert np.array_equal(built.values, pde.bump(dom, 0.0, 0.4).values)


def test_every_kind_has_a_runner():
    assert set(RUNNERS) == set(ScenarioKind.ALL)


def test_prepare_records_the_time_step():
    ctx = prepare(make_scenario(ScenarioKind.CONTRACTION))
    assert ctx.report.measured['dt'] == pytest.approx(1e-3)
    assert ctx.report.provenance['seed'] == 0
    assert ctx.record.times[-1] == pytest.approx(0.01)


def test_contraction_passes_without_noise():
    report = run_contraction(make_scenario(ScenarioKind.CONTRACTION))
    assert report.passed
    assert check_names(report) == {'nonnegative_data', 'contraction'}
    assert report.measured['max_l1_difference'] <= report.measured['initial_l1_difference'] * (1 + 1e-9)


def test_contraction_of_identical_data():
    scenario = make_scenario(ScenarioKind.CONTRACTION, {'initial_alt': {'kind': "bump"}})
    report = run_contraction(scenario)
    assert report.passed
    assert report.measured['max_l1_difference'] == 0.0


def test_contraction_rejects_signed_data():
    scenario = make_scenario(ScenarioKind.CONTRACTION, {'initial': {'kind': "signed_bump", 'center': 0.3,
                                                                    'width': 0.1}})
    report = run_contraction(scenario)
    assert not report.passed
    assert report.failures() == ['nonnegative_data']


def test_contraction_is_reproducible():
    scenario = make_scenario(ScenarioKind.CONTRACTION, path={'source': "brownian", 'steps': 16},
                             coefficient={'kind': "basis-product", 'basis': ["sin2_1"], 'amplitude': 0.5})
    assert run_scenario(scenario, 3).measured == run_scenario(scenario, 3).measured
    assert run_scenario(scenario, 3).measured != run_scenario(scenario, 4).measured


def test_positivity_and_mass():
    scenario = make_scenario(ScenarioKind.POSITIVITY_MASS, {'T': 0.005, 'refine_levels': 2})
    report = run_positivity_mass(scenario)
    assert report.passed
    assert {'negativity', 'mass_drift', 'zero_trace'} <= check_names(report)
    assert report.measured['mass_drift_relative'] <= 1e-8
    assert {row.key for row in report.series} >= {'mass', 'min_value', 'zero_trace'}


def test_positivity_with_data_touching_the_boundary():
    scenario = make_scenario(ScenarioKind.POSITIVITY_MASS, {'T': 0.005, 'refine_levels': 2,
                                                           'initial': {'kind': "sine"}})
    report = run_positivity_mass(scenario)
    assert report.passed
    drift = next(check for check in report.checks if check.name == 'mass_drift')
    assert not drift.asserted
    assert report.measured['contact_time'] == 0.0
    assert len([row for row in report.series if row.key == 'zero_trace']) == 2


def test_heat_oracle_at_the_acceptance_sizes():
    scenario = make_scenario(ScenarioKind.HEAT_ORACLE, {'cells': 512, 'T': 0.1, 'dt': 1e-5, 'record_count': 11,
                                                       'initial': {'kind': "sine"}})
    report = run_heat_oracle(scenario)
    assert report.passed
    assert report.measured['max_l2_error'] <= 5e-4
    assert len([row for row in report.series if row.key == 'l2_error']) == 11


def test_heat_oracle_includes_the_viscous_rate():
    # exp(-pi^2 t) and exp(-1.5 pi^2 t) differ by about 0.1 in L2 at t = 0.1
    scenario = make_scenario(ScenarioKind.HEAT_ORACLE, {'cells': 64, 'T': 0.1, 'dt': 1e-4, 'eta': 0.5,
                                                       'initial': {'kind': "sine"}},
                             tolerances={'heat_l2': 5e-3})
    report = run_heat_oracle(scenario)
    assert report.passed
    assert report.measured['final_l2_error'] < 5e-3


@pytest.mark.parametrize("pde_section, sections", [
    ({'m': 2.0, 'initial': {'kind': "sine"}}, {}),
    ({'initial': {'kind': "bump"}}, {}),
    ({'initial': {'kind': "sine"}}, NOISY),
])
def test_heat_oracle_preconditions(pde_section, sections):
    with pytest.raises(ConfigError):
        make_scenario(ScenarioKind.HEAT_ORACLE, {'m': 1.0, **pde_section}, **sections)


def test_transport_contraction_and_cocycle():
    contraction = run_contraction(make_scenario(ScenarioKind.CONTRACTION, **NOISY))
    assert contraction.passed
    assert contraction.measured['initial_l1_difference'] > 0.0
    cocycle = run_cocycle(make_scenario(ScenarioKind.COCYCLE, **NOISY))
    assert cocycle.passed
    assert cocycle.measured['scheme_error'] > 0.0


def test_cocycle_without_noise():
    report = run_cocycle(make_scenario(ScenarioKind.COCYCLE))
    assert report.passed
    assert report.measured['shift'] == pytest.approx(0.01 / 3.0)


def test_noise_continuity_records_the_ladder():
    scenario = make_scenario(ScenarioKind.NOISE_CONTINUITY, {'T': 0.05, 'ladder_levels': 3},
                             path={'source': "brownian", 'steps': 64},
                             coefficient={'kind': "basis-product", 'basis': ["sin2_1"], 'amplitude': 0.25})
    report = run_noise_continuity(scenario)
    assert {'distance_monotone', 'error_monotone', 'finest_error'} <= check_names(report)
    distances = [row.value for row in report.series if row.key == 'd_alpha']
    assert len(distances) == 3
    assert all(d > 0.0 for d in distances)


def test_noise_continuity_with_the_schauder_driver():
    scenario = make_scenario(ScenarioKind.NOISE_CONTINUITY, {'T': 0.05, 'dt': 1e-4, 'ladder_levels': 3},
                             path={'source': "schauder", 'steps': 64, 'alpha': 0.4},
                             coefficient={'kind': "basis-product", 'basis': ["sin2_1"], 'amplitude': 0.25})
    report = run_noise_continuity(scenario)
    distances = [row.value for row in report.series if row.key == 'd_alpha']
    assert all(b < a for a, b in zip(distances, distances[1:]))
    assert {check.name: check.passed for check in report.checks}['distance_monotone']


def test_noise_continuity_needs_a_dyadic_path():
    scenario = make_scenario(ScenarioKind.NOISE_CONTINUITY, {'ladder_levels': 3},
                             path={'source': "brownian", 'steps': 60})
    with pytest.raises(LadderError):
        run_noise_continuity(scenario)
    reports = ScenarioManager().run(scenario)
    assert len(reports) == 1
    assert reports[0].failures() == ['precondition']
    assert 'LadderError' in reports[0].checks[0].note


def test_vanishing_viscosity_without_noise():
    scenario = make_scenario(ScenarioKind.VANISHING_VISCOSITY, path={'source': "brownian", 'steps': 16})
    report = run_vanishing_viscosity(scenario)
    assert report.passed
    assert len([row for row in report.series if row.key.startswith('combined_')]) == 9
    assert 'eta_scaling_exponent' in report.measured


def test_vanishing_viscosity_ladders_must_decrease():
    scenario = make_scenario(ScenarioKind.VANISHING_VISCOSITY, {'eta_ladder': [1e-3, 1e-2]},
                             path={'source': "brownian", 'steps': 16})
    with pytest.raises(LadderError):
        run_vanishing_viscosity(scenario)


def test_flow_stability_of_the_trivial_flow():
    scenario = make_scenario(ScenarioKind.FLOW_STABILITY, {'T': 0.25, 'ladder_levels': 2},
                             path={'source': "brownian", 'steps': 32}, flow={'points': 4, 'levels': [3, 4, 5]})
    report = run_flow_stability(scenario)
    assert report.passed
    assert report.measured['flow_stability_constant'] == 0.0
    assert report.details['boundary_exponents']['displacement'] == 0.0
    assert {'divergence_free', 'boundary_ratio_growth', 'flow_stability_bounded'} <= check_names(report)
    assert report.details['boundary_growth']['displacement'] == 0.0


def test_estimate_suite_consistency_checks():
    scenario = make_scenario(ScenarioKind.ESTIMATE_SUITE, {'cells': 64, 'm': 1.0})
    report = run_estimate_suite(scenario)
    passed = {check.name for check in report.checks if check.passed}
    assert {'singular_moments_finite', 'poincare_sine', 'chi_recovers_u', 'chi_integer_identity',
            'chi_l1_identity'} <= passed
    assert len(report.details['kinetic']['weak_residuals']) == 3
    assert report.measured['weak_residual'] >= 0.0
    assert report.measured['energy_balance'] <= report.details['stability']['initial_l2'] * (1 + 1e-12)


def test_manager_runs_seeds_in_parallel():
    data = {
        'scenario': {'id': "parallel", 'kind': ScenarioKind.CONTRACTION, 'seeds': [0, 1], 'workers': 2},
        'pde': SMALL_PDE,
        'path': {'source': "brownian", 'steps': 16},
        'coefficient': {'basis': ["sin2_1"], 'amplitude': 0.5},
    }
    parallel = Scenario.from_config(parse_config(data))
    serial = Scenario.from_config(parse_config({**data, 'scenario': {**data['scenario'], 'workers': 1}}))
    manager = ScenarioManager()
    fast = manager.run(parallel)
    slow = manager.run(serial)
    assert [r.seed for r in fast] == [0, 1]
    assert [r.measured for r in fast] == [r.measured for r in slow]


def test_manager_unknown_kind():
    with pytest.raises(ScenarioError):
        ScenarioManager().runner("annealing")


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_pass(path):
    scenario = Scenario.from_config(load_config(path))
    for seed in scenario.seeds:
        report = run_scenario(scenario, seed)
        assert report.passed, f"{path.name} seed {seed}: {report.failures()}"


@pytest.mark.parametrize("name, checks", [
    ("estimate_suite", {'weak_residual_refinement', 'perturbation_sensitivity'}),
    ("noise_continuity", {'distance_monotone', 'error_monotone', 'finest_error'}),
    ("flow_stability", {'inverse_relation', 'det_jacobian', 'divergence_free', 'boundary_flatness',
                        'boundary_ratio_growth', 'flow_deviation_monotone', 'flow_stability_bounded'}),
    ("heat", {'heat_l2'}),
])
def test_shipped_acceptance_checks(name, checks):
    scenario = Scenario.from_config(load_config(CONFIG_DIR / f"{name}.toml"))
    report = run_scenario(scenario, scenario.seeds[0])
    outcome = {check.name: check.passed for check in report.checks}
    assert checks <= set(outcome)
    assert all(outcome[check] for check in checks), report.failures()
