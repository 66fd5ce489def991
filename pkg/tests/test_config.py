import numpy as np
import pytest

from schmm_lmpc.config import load_config, parse_config
from schmm_lmpc.errors import ConfigError


@pytest.fixture
def base(tmp_path):
    (tmp_path / "g.graph").write_text("0 1\n1 2\n")
    return tmp_path


def test_defaults_and_access(base):
    cfg = parse_config("graph: g.graph\n", base)
    assert cfg["network.eta"] == 0.1 and cfg["weights.N_max"] == 20 and cfg.ts == 10.0
    A, B, tr = cfg.dynamics()
    assert A.shape == (6, 6) and B.shape == (6, 4) and tr == (0, 1, 2)
    P, Q, P_v = cfg.weight_matrices(6, 4)
    assert np.array_equal(P, np.eye(6)) and P_v == "riccati"


def test_matrix_forms(base):
    cfg = parse_config("graph: g.graph\nweights: {P: [1, 2, 3, 4, 5, 6], Q: 2.5}\n", base)
    P, Q, _ = cfg.weight_matrices(6, 4)
    assert np.array_equal(np.diag(P), [1, 2, 3, 4, 5, 6]) and np.array_equal(Q, 2.5 * np.eye(4))


def test_custom_dynamics(base):
    cfg = parse_config("graph: g.graph\ndynamics: {A: [[1]], B: [[1]]}\nweights: {P: 1, Q: 1}\n", base)
    A, B, tr = cfg.dynamics()
    assert A.tolist() == [[1.0]] and tr == (0,)


def test_round_trip(base, data_dir):
    for cfg in (parse_config("graph: g.graph\nsimulation: {steps: 7}\n", base),
                load_config(data_dir / "example2.cfg")):
        again = parse_config(cfg.dumps(), cfg.base_dir)
        assert again == cfg and again.dumps() == cfg.dumps()


def test_bundled_configs_load(data_dir):
    c1, c2 = load_config(data_dir / "example1.cfg"), load_config(data_dir / "example2.cfg")
    assert c1["simulation.steps"] == 1000 and c2["simulation.steps"] == 2000


@pytest.mark.parametrize("text,field", [
    ("graph: missing.graph\n", "graph"),
    ("simulation: {steps: 3}\n", "graph"),
    ("graph: g.graph\nbogus: 1\n", "bogus"),
    ("graph: g.graph\nweights: {nope: 1}\n", "weights.nope"),
    ("graph: g.graph\nweights: {theta: 1.0}\n", "weights.theta"),
    ("graph: g.graph\nweights: {P: [1, 2]}\n", "weights.P"),
    ("graph: g.graph\nweights: {Q: -1}\n", "weights.Q"),
    ("graph: g.graph\nweights: {P_v: sometimes}\n", "weights.P_v"),
    ("graph: g.graph\nnetwork: {eta: 2}\n", "network.eta"),
    ("graph: g.graph\nnetwork: {agent_model: nowhere.model}\n", "network.agent_model"),
    ("graph: g.graph\nnetwork: {tau_max: 2.5}\n", "network.tau_max"),
    ("graph: g.graph\nsimulation: {steps: 0}\n", "simulation.steps"),
    ("graph: g.graph\nsimulation: {seed: yes}\n", "simulation.seed"),
    ("graph: g.graph\ndynamics: {template: quadcopter}\n", "dynamics.template"),
    ("graph: g.graph\ndynamics: {A: [[1, 0]], B: [[1]]}\n", "dynamics.A"),
    ("graph: [unclosed\n", "<syntax>"),
])
def test_errors_name_the_field(base, text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, base)
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_overrides(base):
    cfg = parse_config("graph: g.graph\n", base).with_overrides(simulation__steps=12, network__eta=0.0)
    assert cfg["simulation.steps"] == 12 and cfg["network.eta"] == 0.0
    with pytest.raises(ConfigError):
        cfg.with_overrides(simulation__steps=-1)


def test_paths(base, tmp_path):
    cfg = parse_config("graph: g.graph\nsimulation: {output: runs/x}\n", base)
    assert cfg.resolve("g.graph") == base / "g.graph"
    assert str(cfg.output_dir) == "runs/x"
