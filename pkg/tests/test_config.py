import pytest

from romforge.ann import TABLE1
from romforge.config import DESK_ANN, ExperimentConfig, load_config, parse_config, validate
from romforge.exceptions import ConfigurationError


def test_defaults_are_valid():
    cfg = validate(ExperimentConfig())
    assert (cfg.mesh.nx, cfg.mesh.ny) == (64, 32)
    assert cfg.ann["pressure"].activation == "relu"
    assert cfg.ann["wss"].neurons == DESK_ANN["wss"]["neurons"] <= 200


def test_dumps_roundtrip():
    cfg = ExperimentConfig().with_overrides(mesh=dict(nx=32), seed=7,
                                            ann={"wss": {"epochs": 10}})
    back = parse_config(cfg.dumps())
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()
    assert back.digest() != ExperimentConfig().digest()


def test_parse_keys_and_comments():
    cfg = parse_config("""
        # comment
        mesh.nx = 32   # trailing
        ann.epochs = 100
        ann.velocity.neurons = 12
        study.deltas = 0.9, 0.99
        pod.center = true
        run.seed = 3
    """)
    assert cfg.mesh.nx == 32 and cfg.pod.center is True
    assert all(c.epochs == 100 and c.seed == 3 for c in cfg.ann.values())
    assert cfg.ann["velocity"].neurons == 12 and cfg.ann["pressure"].neurons == 64
    assert cfg.study.deltas == (0.9, 0.99)


def test_table1_preset():
    cfg = parse_config("ann.preset = table1\n")
    assert cfg.ann["velocity"].neurons == TABLE1["velocity"]["neurons"]


@pytest.mark.parametrize("text", [
    "mesh.depth = 3", "solver", "mesh.nx = many", "ann.pressure.width = 3",
    "ann.preset = huge", "solver.dt = 0.003", "study.snapshot_counts = 7",
    "study.n_eval = 3", "pod.delta = 1.5", "pod.criterion = l2", "study.eval_time = 2.0",
    "ffd.dims = 7", "ann.learning_rate = -1", "bogus.key = 1",
])
def test_bad_configs(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "none.cfg")
