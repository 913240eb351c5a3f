"""Logging set-up shared by the command line and the suite runner."""
import logging.config
import logging.handlers
import os

import coloredlogs
import yaml

from . import utils  # noqa: F401

LOGCONF = """
version: 1
disable_existing_loggers: False
filters:
  topic:
    (): weakkam.log.LogFilter
    topic: NONE
handlers:
  console:
    class: logging.StreamHandler
    formatter: standard
    stream: 'ext://sys.stderr'
    filters: [topic]
  file:
    class: weakkam.log.TimeRotatingFileHandler
    filename: ${WEAKKAM_LOGFILE}
    formatter: standard
    when: "d"
    backupCount: 7
    filters: [topic]
formatters:
  standard:
    class: weakkam.log.ColoredFormatter
    format: "%(asctime)s %(topic)s %(levelname)s %(name)s %(funcName)s - %(message)s"
loggers:
  weakkam:
    handlers: [console, file]
    level: ${WEAKKAM_LOGLEVEL}
    propagate: false
"""

# entry point -> (topic, route py.warnings to the console)
ENTRY_POINTS = {
    "cli": ("CLI", False),
    "suite": ("SUITE", True),
}


def initlog(val: str, level: str = None) -> dict:
    """Configure logging for entry point ``val``.

    The level comes from ``level``, else ``$WEAKKAM_LOGLEVEL``, else INFO.
    The file handler is only installed when ``$WEAKKAM_LOGFILE`` is set.
    """
    topic, warnings = ENTRY_POINTS[val]
    if level:
        os.environ["WEAKKAM_LOGLEVEL"] = level
    os.environ.setdefault("WEAKKAM_LOGLEVEL", "INFO")

    log_config = yaml.safe_load(LOGCONF)
    log_config["filters"]["topic"]["topic"] = topic
    if not os.environ.get("WEAKKAM_LOGFILE"):
        del log_config["handlers"]["file"]
        log_config["loggers"]["weakkam"]["handlers"] = ["console"]
    if warnings:
        log_config["loggers"]["py.warnings"] = {
            "handlers": ["console"], "level": "WARNING", "propagate": False,
        }
    logging.captureWarnings(warnings)
    logging.config.dictConfig(log_config)
    return log_config


class LogFilter(logging.Filter):
    """Stamp records with fixed attributes.

    Records that already carry one of the attributes with another value are
    dropped.
    """

    def __init__(self, **attrs):
        super().__init__()
        self.attrs = attrs

    def filter(self, record):
        for key, value in self.attrs.items():
            if not hasattr(record, key):
                setattr(record, key, value)
            elif getattr(record, key) != value:
                return False
        return True


class TimeRotatingFileHandler(logging.handlers.TimedRotatingFileHandler):
    """Daily rotated log file; its directory is created on demand."""

    def __init__(self, filename: str, **kwargs):
        path = os.path.dirname(filename)
        if path:
            os.makedirs(path, exist_ok=True)
        super().__init__(filename, **kwargs)


class ColoredFormatter(coloredlogs.ColoredFormatter):
    def __init__(self, fmt: str, datefmt: str = None, style: str = "%"):
        super().__init__(fmt, datefmt, style=style)

    def format(self, record):
        if not hasattr(record, "topic"):
            record.topic = ""
        return super().format(record)
