import pytest

from gsbart.config import WORKERS_ENV, ConfigError, config_from_dict, load_config, parse_kv


def test_parse_kv():
    assert parse_kv("# comment\n a = 1 \nb=x=y # tail\n\n") == {"a": "1", "b": "x=y"}


@pytest.mark.parametrize("text,match", [("a\n", "expected"), ("= 1\n", "empty key"), ("a=1\na=2\n", "duplicate")])
def test_parse_kv_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_kv(text)


def test_defaults(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    cfg = load_config()
    s = cfg.sampler
    assert (s.n_trees, s.n_sweeps, s.burn_in, s.K) == (50, 215, 15, 20)
    assert (s.alpha, s.beta, s.a, s.nu, s.sigma_quantile, s.max_depth) == (0.95, 2.0, 3.0, 3.0, 0.9, 10)
    assert s.b is None
    assert (cfg.model, cfg.chain_bins, cfg.workers) == ("normal", 100, 1)


def test_aliases_and_types():
    cfg = config_from_dict({"T": "7", "N": "30", "burn_in": "5", "alpha": "0.9", "b": "0.25", "model": "count"})
    assert cfg.sampler.n_trees == 7 and cfg.sampler.n_sweeps == 30 and cfg.sampler.burn_in == 5
    assert cfg.sampler.alpha == 0.9 and cfg.sampler.b == 0.25
    assert cfg.model == "count"


@pytest.mark.parametrize("kv,match", [
    ({"colour": "red"}, "unknown config key"),
    ({"n_trees": "many"}, "cannot parse"),
    ({"model": "poisson"}, "model must be"),
    ({"burn_in": "500"}, "burn"),
    ({"b": "0"}, "b must be positive"),
    ({"chain_bins": "1"}, "at least 2"),
    ({"test_fraction": "1"}, "test_fraction"),
    ({"graph.roads.edges": "e.txt"}, "missing bins"),
    ({"graph.roads.colour": "x"}, "unknown graph setting"),
])
def test_invalid(kv, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(kv)


def test_graph_keys_resolve_relative_paths(tmp_path):
    (tmp_path / "bins.txt").write_text("0\n")
    cfg_file = tmp_path / "fit.cfg"
    cfg_file.write_text("graph.roads.edges = edges.txt\ngraph.roads.bins = bins.txt\ngraph.roads.M = 3\n"
                        "graph.zone.edges = /abs/e.txt\ngraph.zone.bins = zone_col\nchain.x1.bins = 10\n")
    cfg = load_config(cfg_file)
    roads, zone = cfg.structural
    assert roads.edges == str(tmp_path / "edges.txt") and roads.bins == str(tmp_path / "bins.txt")
    assert roads.M == 3 and zone.M == 5
    assert zone.edges == "/abs/e.txt" and zone.bins == "zone_col"  # a column name stays as is
    assert cfg.feature_bins == {"x1": 10}


def test_workers_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert config_from_dict({}).workers == 3
    assert config_from_dict({"workers": "2"}).workers == 2  # the config file wins
    monkeypatch.setenv(WORKERS_ENV, "x")
    with pytest.raises(ConfigError):
        config_from_dict({})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")


def test_to_dict_lists_sampler_settings():
    d = config_from_dict({"T": "4"}).to_dict()
    assert d["n_trees"] == 4 and d["model"] == "normal" and d["structural"] == []
