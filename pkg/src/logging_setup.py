from __future__ import annotations

"""logging_setup.py

CLI 起動時に一度だけ呼ぶロガー初期化。各モジュールは
``logger = logging.getLogger(__name__)`` を持つだけでよい。
"""

import logging
import sys

_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | int = "INFO") -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT))
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
