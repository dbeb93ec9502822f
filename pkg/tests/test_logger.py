"""Run logger: lazy handlers, rotating file, level resolution."""

from __future__ import annotations

import logging

import pytest

from depthsup.config import config
from depthsup.core.logger import LEVEL_ENV_VAR, LOG_FILE_NAME, RunLogger, resolve_level


@pytest.fixture
def run_logger(tmp_path, request, monkeypatch):
    monkeypatch.delenv(LEVEL_ENV_VAR, raising=False)
    created: list[RunLogger] = []

    def make(**kwargs) -> RunLogger:
        log = RunLogger(name=f"depthsup.test.{request.node.name}.{len(created)}",
                        log_dir=str(tmp_path / "logs"), **kwargs)
        created.append(log)
        return log

    yield make
    for log in created:
        log.close()


def _read(log: RunLogger) -> str:
    log.close()
    with open(log.log_path, encoding="utf-8") as handle:
        return handle.read()


# ── Levels ──


class TestResolveLevel:

    @pytest.mark.parametrize("name, expected", [
        ("debug", logging.DEBUG),
        ("INFO", logging.INFO),
        (" Warning ", logging.WARNING),
        ("critical", logging.CRITICAL),
    ])
    def test_known_names(self, name, expected):
        assert resolve_level(name) == expected

    def test_unknown_name(self):
        assert resolve_level("chatty") is None


# ── Handlers ──


class TestRunLogger:

    def test_nothing_is_written_before_the_first_record(self, run_logger, tmp_path):
        log = run_logger()
        assert not log.attached
        assert not (tmp_path / "logs").exists()
        log.info("first %d", 1)
        assert log.attached
        assert log.log_path == str(tmp_path / "logs" / LOG_FILE_NAME)
        assert "first 1" in _read(log)

    def test_records_below_the_level_are_dropped(self, run_logger):
        log = run_logger(level="warning")
        log.info("quiet")
        log.debug("quieter")
        assert not log.attached
        log.warning("loud")
        text = _read(log)
        assert "loud" in text
        assert "quiet" not in text

    def test_environment_overrides_the_configured_level(self, run_logger, monkeypatch):
        monkeypatch.setenv(LEVEL_ENV_VAR, "debug")
        log = run_logger()
        assert log.level == logging.DEBUG
        log.debug("detail")
        assert "detail" in _read(log)

    def test_unknown_level_falls_back_and_is_reported(self, run_logger, monkeypatch):
        monkeypatch.setenv(LEVEL_ENV_VAR, "chatty")
        log = run_logger()
        assert log.rejected_level == "chatty"
        assert log.level == resolve_level(config.log_level)
        log.error("boom")
        text = _read(log)
        assert "Unknown log level 'chatty'" in text
        assert "boom" in text

    def test_close_detaches_and_next_record_reattaches(self, run_logger):
        log = run_logger()
        log.info("one")
        log.close()
        assert not log.attached
        assert logging.getLogger(log.name).handlers == []
        log.info("two")
        text = _read(log)
        assert "one" in text and "two" in text

    def test_console_goes_to_stderr(self, run_logger, capsys):
        log = run_logger()
        log.warning("on the console")
        captured = capsys.readouterr()
        assert "on the console" in captured.err
        assert captured.out == ""
