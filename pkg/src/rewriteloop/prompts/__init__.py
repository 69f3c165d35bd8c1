"""Prompt templates and explanation blocks stored as plain-text resources
so they can be diffed by golden-file tests."""

from importlib import resources


def load(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")
