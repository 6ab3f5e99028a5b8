from pathlib import Path

import pytest

from roughpme.engine.config import ExperimentConfig, load_config, parse_config
from roughpme.engine.constants import DEFAULT_TOLERANCES, ScenarioKind
from roughpme.engine.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def minimal(**sections):
    data = {'scenario': {'id': "demo", 'kind': "contraction"}}
    data.update(sections)
    return data


def test_defaults():
    config = parse_config(minimal())
    assert config.scenario.seeds == [0]
    assert config.pde.m == 2.0
    assert config.pde.initial.kind == "bump"
    assert config.path_horizon == config.pde.T
    assert config.tolerances.mass_drift == DEFAULT_TOLERANCES['mass_drift']


def test_hash_is_stable_and_sensitive():
    a = parse_config(minimal())
    b = parse_config(minimal())
    c = parse_config(minimal(pde={'m': 3.0}))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 64


@pytest.mark.parametrize("data", [
    minimal(pde={'m': 2.0, 'speed': 1.0}),
    {'scenario': {'id': "demo", 'kind': "annealing"}},
    minimal(pde={'xi_bins': 63}),
    minimal(pde={'lo': 1.0, 'hi': 0.0}),
    minimal(pde={'T': 0.5}, path={'horizon': 0.2}),
    minimal(path={'source': "file"}),
    minimal(path={'alpha': 0.3}),
    minimal(pde={'eta': 1.0}),
    {'pde': {'m': 2.0}},
])
def test_invalid_documents(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_models_are_frozen():
    config = parse_config(minimal())
    with pytest.raises(Exception):
        config.pde.m = 3.0


def test_load_from_toml(write_config):
    path = write_config("""
[scenario]
id = "heat"
kind = "estimate-suite"
seeds = [3, 4]

[pde]
m = 1.0
T = 0.05

[path]
source = "zero"
horizon = 0.1
""")
    config = load_config(path)
    assert isinstance(config, ExperimentConfig)
    assert config.scenario.kind == ScenarioKind.ESTIMATE_SUITE
    assert config.scenario.seeds == [3, 4]
    assert config.path_horizon == pytest.approx(0.1)


def test_load_errors(write_config, tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_config("[scenario\nid = 1\n"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    config = load_config(path)
    assert config.scenario.kind in ScenarioKind.ALL


def test_heat_oracle_and_schauder_source():
    config = parse_config(minimal(scenario={'id': "heat", 'kind': "heat-oracle"},
                                  path={'source': "schauder", 'steps': 64}))
    assert config.scenario.kind == ScenarioKind.HEAT_ORACLE
    assert config.tolerances.heat_l2 == DEFAULT_TOLERANCES['heat_l2'] == 5e-4
    assert config.flow.xi_max == 1.0
    with pytest.raises(ConfigError):
        parse_config(minimal(path={'source': "levy"}))
