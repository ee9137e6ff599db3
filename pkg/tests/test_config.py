import logging

import pytest

from dls.config import RuntimeConfig, SolverDefaults


@pytest.fixture
def settings_file(tmp_path, monkeypatch):
    path = tmp_path / "dls.toml"
    path.write_text("[solver]\nhorizon_n = 16\nmargin_buffer = 0.5\n", encoding="utf-8")
    monkeypatch.setenv("DLS_SETTINGS_FILE", str(path))
    return path


class TestSolverDefaults:
    def test_builtin(self, monkeypatch, tmp_path):
        monkeypatch.setenv("DLS_SETTINGS_FILE", str(tmp_path / "missing.toml"))
        assert SolverDefaults.get("HORIZON_N") == 20
        assert SolverDefaults.get_config_report() == {k.lower(): v for k, v in SolverDefaults.get_all_defaults().items()}

    def test_settings_file(self, settings_file):
        assert SolverDefaults.get("HORIZON_N") == 16
        assert SolverDefaults.get("MARGIN_BUFFER") == 0.5

    def test_env_beats_file(self, settings_file, monkeypatch):
        monkeypatch.setenv("DLS_HORIZON_N", "30")
        assert SolverDefaults.get("HORIZON_N") == 30

    def test_unreadable_file_is_ignored(self, tmp_path, monkeypatch, caplog):
        path = tmp_path / "broken.toml"
        path.write_text("[solver\nhorizon_n = ", encoding="utf-8")
        monkeypatch.setenv("DLS_SETTINGS_FILE", str(path))
        with caplog.at_level(logging.WARNING, logger="dls"):
            assert SolverDefaults.get("HORIZON_N") == 20
        assert "Ignoring unreadable settings file" in caplog.text

    def test_bad_value_logs(self, monkeypatch, caplog):
        monkeypatch.setenv("DLS_SEED", "abc")
        with caplog.at_level(logging.WARNING, logger="dls"):
            assert SolverDefaults.get("SEED") == 0
        assert "DLS_SEED" in caplog.text


class TestRuntimeConfig:
    @pytest.mark.parametrize("raw,level", [("DEBUG", logging.DEBUG), ("warning", logging.WARNING), ("15", 15),
                                           ("loud", logging.INFO)])
    def test_log_level(self, monkeypatch, raw, level):
        monkeypatch.setenv("DLS_LOG", raw)
        assert RuntimeConfig.get_log_level() == level

    def test_workers(self, monkeypatch):
        monkeypatch.setenv("DLS_WORKERS", "3")
        assert RuntimeConfig.get_workers() == 3
        monkeypatch.setenv("DLS_WORKERS", "0")
        assert RuntimeConfig.get_workers() == 1
        monkeypatch.setenv("DLS_WORKERS", "many")
        assert RuntimeConfig.get_workers() == 1
