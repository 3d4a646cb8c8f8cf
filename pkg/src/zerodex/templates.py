"""Versioned prompt templates shipped with the package.

A template file is split into named sections by ``### <name>`` header lines;
sections are ``str.format`` templates.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

PARSER_VERSION = "parser_v1"
EXTRACTOR_VERSION = "extractor_v1"
GENERATION_VERSION = "generation_v1"
JUDGE_PAIRWISE_VERSION = "judge_pairwise_v1"
JUDGE_SINGLE_VERSION = "judge_single_v1"
ANNOTATE_VERSION = "annotate_v1"


@lru_cache(maxsize=None)
def load(version: str) -> dict[str, str]:
    raw = resources.files("zerodex").joinpath("templates", f"{version}.txt").read_text(encoding="utf-8")
    sections: dict[str, str] = {}
    name = None
    lines: list[str] = []
    for line in raw.splitlines():
        if line.startswith("### "):
            if name is not None:
                sections[name] = "\n".join(lines).strip("\n")
            name, lines = line[4:].strip(), []
        else:
            lines.append(line)
    if name is not None:
        sections[name] = "\n".join(lines).strip("\n")
    return sections


def render(version: str, section: str, **values) -> str:
    return load(version)[section].format(**values)
