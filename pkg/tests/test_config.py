import json

import pytest

from dpnet.config import ConfigFileError, PipelineConfig, default_config_text, load_config, parse_config


def test_defaults():
    cfg = parse_config("{}")
    assert cfg == PipelineConfig()
    assert cfg.run.duration == 2000.0
    assert cfg.spectral.segment_length == 100_000
    assert cfg.detection.cl == 0.95


def test_default_text_roundtrips():
    cfg = parse_config(default_config_text())
    assert cfg.config_hash() == PipelineConfig().config_hash()


def test_hash_ignores_output_dir_but_tracks_analysis():
    a = parse_config('{"output_dir": "x"}')
    b = parse_config('{"output_dir": "y"}')
    assert a.config_hash() == b.config_hash()
    assert parse_config('{"seed": 1}').config_hash() != a.config_hash()


def test_unknown_key_names_line():
    text = '{\n  "spectral": {\n    "segment_lenght": 5\n  }\n}'
    with pytest.raises(ConfigFileError) as err:
        parse_config(text, "c.json")
    assert err.value.line == 3
    assert "c.json:3:" in str(err.value)


def test_bad_value_in_sensor_names_line():
    text = """{
  "run": {
    "duration": 10,
    "sensors": [
      {"sensor_id": "S01", "station_id": "suzhou"},
      {"sensor_id": "S02", "station_id": "suzhou",
       "noise_asd": -1}
    ]
  }
}"""
    with pytest.raises(ConfigFileError) as err:
        parse_config(text)
    assert err.value.line == 7
    assert "noise_asd" in str(err.value)


def test_invalid_json_line():
    with pytest.raises(ConfigFileError) as err:
        parse_config('{\n "seed": 1,\n}')
    assert err.value.line == 3


@pytest.mark.parametrize(
    "text",
    [
        '{"bogus": 1}',
        '{"detection": {"trials": 10}}',
        '{"detection": {"subset": "some"}}',
        '{"spectral": {"window": "kaiser"}}',
        '{"spectral": {"band": [1, 900]}}',
        '{"run": {"sample_rate": 500}}',
        '{"run": {}, "run_spec": "x.json"}',
        "[]",
    ],
)
def test_rejections(text):
    with pytest.raises(ConfigFileError):
        parse_config(text)


def test_run_spec_reference(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps({"duration": 5}))
    (tmp_path / "cfg.json").write_text('{"run_spec": "spec.json", "seed": 3}')
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.run.duration == 5 and cfg.seed == 3
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "missing.json")


def test_run_spec_reference_error_points_into_referenced_file(tmp_path):
    (tmp_path / "spec.json").write_text('{\n  "duration": -4\n}')
    (tmp_path / "cfg.json").write_text('{"run_spec": "spec.json"}')
    with pytest.raises(ConfigFileError) as err:
        load_config(tmp_path / "cfg.json")
    assert err.value.path.endswith("spec.json")
