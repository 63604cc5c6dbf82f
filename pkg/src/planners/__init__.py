from __future__ import annotations

from .pipeline_planner import END_MARKER, make_pipeline_planner  # noqa: F401
