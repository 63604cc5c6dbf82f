from __future__ import annotations

from .csv_reader import csv_frame_reader  # noqa: F401
from .csv_writer import csv_writer  # noqa: F401
from .metrics_log import MetricsLog, list_json, read_json, read_metrics_log, write_json  # noqa: F401

__all__ = [
    "MetricsLog",
    "csv_frame_reader",
    "csv_writer",
    "list_json",
    "read_json",
    "read_metrics_log",
    "write_json",
]
