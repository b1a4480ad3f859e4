# pylint: disable=missing-docstring

import json
import math

import pytest

from rfncsc.common import ConfigError, DictionaryKind, InvalidParameterError, SolverName, parseEnum
from rfncsc.config import ExperimentConfig, loadConfig, loadLayers, resolveThreads


def _write(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def test_seed_is_mandatory():
    with pytest.raises(ConfigError) as excinfo:
        loadConfig()
    assert excinfo.value.key == "synth.seed"


def test_defaults():
    config = loadConfig(seed=3)
    assert config.synth.seed == 3
    assert config.dictionary.omega0 == pytest.approx(80 * math.pi)
    assert config.synth.snr_db is None
    assert config.makeNoiseSpec() is None
    cfg = config.makeSolverConfig()
    assert cfg.betas == (0.95, 0.88)
    assert cfg.taus == (0.4,)
    assert len(cfg.kernel) == 11
    dictionary = config.makeDictionary()
    assert dictionary.kind is DictionaryKind.TIME_INVARIANT
    assert dictionary.n_x == 60


def test_file_values_and_seed_override(tmp_path):
    path = _write(
        tmp_path,
        {
            "synth": {"seed": 5, "snr_db": 30, "n_channels": 10},
            "dictionary": {"omega0": 160},
            "solver": {"betas": [1, 0.5], "peak_only": True},
        },
    )
    config = loadConfig(path)
    assert config.synth.seed == 5
    assert config.dictionary.omega0 == 160
    assert config.makeSolverConfig().peak_only
    noise = config.makeNoiseSpec()
    assert (noise.snr_db, noise.seed) == (30, 6)
    assert loadConfig(path, seed=9).synth.seed == 9


def test_unknown_keys_report_their_path(tmp_path):
    path = _write(tmp_path, {"synth": {"seed": 1}, "solver": {"bogus": 1}})
    with pytest.raises(ConfigError) as excinfo:
        loadConfig(path)
    assert excinfo.value.key == "solver.bogus"

    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.fromDict({"synth": {"seed": 1}, "extra": {}})
    assert excinfo.value.key == "extra"


def test_syntax_errors_report_their_line(tmp_path):
    path = _write(tmp_path, '{\n  "synth": {"seed": 1,}\n}\n')
    with pytest.raises(ConfigError) as excinfo:
        loadConfig(path)
    assert excinfo.value.line == 2
    assert "line 2" in str(excinfo.value)


@pytest.mark.parametrize(
    "data, key",
    [
        ({"synth": {"seed": "one"}}, "synth.seed"),
        ({"synth": {"seed": 1, "p": None}}, "synth.p"),
        ({"synth": {"seed": 1}, "solver": {"betas": [1, "a"]}}, "solver.betas"),
        ({"synth": {"seed": 1}, "solver": {"peak_only": 1}}, "solver.peak_only"),
        ({"synth": {"seed": 1}, "dictionary": {"n_x": 2.5}}, "dictionary.n_x"),
        ({"synth": {"seed": 1}, "output": {"dtype": "f16"}}, "output.dtype"),
    ],
)
def test_type_errors(data, key):
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.fromDict(data).validate()
    assert excinfo.value.key == key


def test_invalid_values_fail_validation(tmp_path):
    path = _write(tmp_path, {"synth": {"seed": 1, "n_channels": 0}})
    with pytest.raises(ConfigError):
        loadConfig(path)
    path = _write(tmp_path, {"synth": {"seed": 1}, "solver": {"name": "lasso"}})
    with pytest.raises(ConfigError):
        loadConfig(path)
    with pytest.raises(ConfigError):
        loadConfig(seed=1, preset="bogus")
    with pytest.raises(ConfigError):
        loadConfig(str(tmp_path / "missing.json"), seed=1)


def test_field_preset():
    config = loadConfig(seed=0, preset="field")
    assert parseEnum(DictionaryKind, config.dictionary.kind) is DictionaryKind.TIME_VARIANT_Q
    assert config.dictionary.q == 200.0
    assert config.dictionary.n_x == 300
    cfg = config.makeSolverConfig()
    assert cfg.betas == (1.0, 0.7)
    assert cfg.taus == (0.4, 1.0)
    assert cfg.max_iters == 2
    assert len(cfg.kernel) == 9
    assert config.makeNoiseSpec().snr_db == 40.0
    assert config.makeQParams().q == 200.0


def test_load_layers(tmp_path):
    path = _write(
        tmp_path,
        [
            {"beta": 1.0, "omega0": 80 * math.pi},
            {"beta": 0.5, "alpha": 0.25, "filter": [0.5, 1.0, 0.5]},
        ],
        "layers.json",
    )
    layers = loadLayers(path, 20)
    assert [layer.beta for layer in layers] == [1.0, 0.5]
    assert [layer.alpha for layer in layers] == [1.0, 0.25]
    assert layers[0].dictionary.filter_length == 15
    assert layers[1].dictionary.filter_length == 3
    assert layers[1].dictionary.n_x == 20

    config = ExperimentConfig.fromDict({"synth": {"seed": 1}, "solver": {"layers": path}})
    assert len(config.makeLayers()) == 2


@pytest.mark.parametrize(
    "entries, key",
    [
        ([], "layers"),
        ([{"omega0": 250.0}], "layers[0].beta"),
        ([{"beta": 1.0}], "layers[0]"),
        ([{"beta": 1.0, "omega0": 250.0, "filter": [1.0]}], "layers[0]"),
        ([{"beta": 1.0, "filter": [1.0, 0.5]}], "layers[0]"),
        ([{"beta": 1.0, "omega0": 250.0, "gain": 2}], "layers[0].gain"),
    ],
)
def test_bad_layers(tmp_path, entries, key):
    path = _write(tmp_path, entries, "layers.json")
    with pytest.raises(ConfigError) as excinfo:
        loadLayers(path, 20)
    assert excinfo.value.key == key


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("RFNCSC_THREADS", raising=False)
    assert resolveThreads() == 1
    assert resolveThreads(3) == 3
    monkeypatch.setenv("RFNCSC_THREADS", "4")
    assert resolveThreads() == 4
    assert resolveThreads(2) == 2
    monkeypatch.setenv("RFNCSC_THREADS", "many")
    with pytest.raises(ConfigError):
        resolveThreads()
    with pytest.raises(ConfigError):
        resolveThreads(0)


def test_config_error_message():
    error = ConfigError("Bad value", key="solver.step", line=2, column=7)
    assert str(error) == "Bad value (key 'solver.step', line 2, column 7)"
    assert str(ConfigError("Plain")) == "Plain"


def test_parse_enum():
    assert parseEnum(SolverName, "ista") is SolverName.ISTA
    assert parseEnum(SolverName, "RFN_ITA") is SolverName.RFN_ITA
    assert parseEnum(SolverName, "support_detect") is SolverName.SUPPORT_DETECT
    assert parseEnum(SolverName, SolverName.UNROLLED) is SolverName.UNROLLED
    with pytest.raises(InvalidParameterError, match="valid values"):
        parseEnum(SolverName, "lasso")
