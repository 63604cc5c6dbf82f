from __future__ import annotations

from .config import TEMPLATES, ToyVQAConfig  # noqa: F401
from .dataset import (  # noqa: F401
    SPLITS,
    DatasetManifest,
    Example,
    answer_histogram,
    generate_dataset,
    generate_split,
    load_manifest,
    load_split,
    make_example,
    to_inputs,
)
from .featurize import attribute_projection, featurize, normalized_box  # noqa: F401
from .questions import NoValidQuestion, Question, answer_for, pose_question  # noqa: F401
from .scene import Scene, SceneObject, generate_scene  # noqa: F401
from .vocab import COLORS, SHAPES, TOKENS, Vocabulary, answer_vocabulary  # noqa: F401

__all__ = [
    "COLORS",
    "SHAPES",
    "SPLITS",
    "TEMPLATES",
    "TOKENS",
    "DatasetManifest",
    "Example",
    "NoValidQuestion",
    "Question",
    "Scene",
    "SceneObject",
    "ToyVQAConfig",
    "Vocabulary",
    "answer_for",
    "answer_histogram",
    "answer_vocabulary",
    "attribute_projection",
    "featurize",
    "generate_dataset",
    "generate_scene",
    "generate_split",
    "load_manifest",
    "load_split",
    "make_example",
    "normalized_box",
    "pose_question",
    "to_inputs",
]
