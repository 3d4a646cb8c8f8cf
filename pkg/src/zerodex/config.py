"""TOML configuration: pipeline bounds plus one section per backend role.

Relative paths inside the file resolve against the file's own directory.
Secrets never live in the file; remote sections name an environment variable.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import mocks
from .gateway import ChatBackend, ChatCall, HashEmbedder, RemoteChatBackend, RemoteEmbedBackend, ScriptedBackend
from .pipeline import Backends, PipelineConfig
from .web_search import BingSearchEngine, FixtureFetcher, GoogleSearchEngine, HttpFetcher, MockSearchEngine


class ConfigError(ValueError):
    pass


HEURISTIC_MOCKS = {
    "parser": mocks.heuristic_parser,
    "overlap-extractor": mocks.overlap_extractor,
    "fraction-extractor": mocks.fraction_extractor,
    "random-extractor": mocks.random_extractor,
    "all-tags-extractor": mocks.all_tags_extractor,
    "echo-generator": mocks.echo_generator,
    "length-judge": mocks.length_judge,
    "position-judge": mocks.position_biased_judge,
    "length-grader": mocks.length_grader,
    "overlap-annotator": mocks.overlap_annotator,
}

ROLE_DEFAULT_MOCK = {
    "parser": "parser",
    "extractor": "overlap-extractor",
    "generator": "echo-generator",
    "judge": "length-judge",
    "annotator": "overlap-annotator",
    "alt_extractor": "random-extractor",
    "grader": "length-grader",
}


class SamplingOverride:
    """Forces temperature and seed from config onto every call."""

    def __init__(self, inner: ChatBackend, temperature: float | None, seed: int | None):
        self.inner = inner
        self.temperature = temperature
        self.seed = seed

    def chat(self, call: ChatCall):
        changes = {}
        if self.temperature is not None:
            changes["temperature"] = self.temperature
        if self.seed is not None:
            changes["seed"] = self.seed
        return self.inner.chat(dataclasses.replace(call, **changes) if changes else call)


def _path(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def build_chat_backend(role: str, section: dict, base: Path) -> ChatBackend:
    kind = section.get("kind", "heuristic-mock")
    if kind == "remote":
        for key in ("endpoint", "model"):
            if key not in section:
                raise ConfigError(f"backends.{role}: remote backend needs '{key}'")
        backend: ChatBackend = RemoteChatBackend(
            section["endpoint"], section["model"], section.get("api_key_env"), float(section.get("timeout", 60.0))
        )
    elif kind == "scripted-mock":
        fixtures = {}
        if "fixtures" in section:
            fixtures = json.loads(_path(base, section["fixtures"]).read_text(encoding="utf-8"))
        rules = [tuple(r) for r in section.get("rules", [])]
        backend = ScriptedBackend(fixtures, rules, section.get("default"))
    elif kind == "heuristic-mock":
        name = section.get("mock", ROLE_DEFAULT_MOCK.get(role))
        if name not in HEURISTIC_MOCKS:
            raise ConfigError(f"backends.{role}: unknown mock {name!r}")
        backend = HEURISTIC_MOCKS[name](**section.get("args", {}))
    else:
        raise ConfigError(f"backends.{role}: unknown kind {kind!r}")
    if "temperature" in section or "seed" in section:
        backend = SamplingOverride(backend, section.get("temperature"), section.get("seed"))
    return backend


def build_engines(section: dict, base: Path) -> list:
    engines = []
    for spec in section.get("engines", []):
        if spec.startswith("mock:"):
            engines.append(MockSearchEngine.from_jsonl(_path(base, spec[5:])))
        elif spec == "google":
            engines.append(GoogleSearchEngine(section.get("google_key_env", "ZERODEX_GOOGLE_KEY")))
        elif spec == "bing":
            engines.append(BingSearchEngine(section.get("bing_key_env", "ZERODEX_BING_KEY")))
        else:
            raise ConfigError(f"search: unknown engine {spec!r}")
    return engines


def load_config(path: str | Path) -> tuple[PipelineConfig, Backends]:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_mapping(data, path.resolve().parent)


def from_mapping(data: dict, base: Path) -> tuple[PipelineConfig, Backends]:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    pipe = data.get("pipeline", {})
    unknown = set(pipe) - known
    if unknown:
        raise ConfigError(f"pipeline: unknown keys {sorted(unknown)}")
    config = PipelineConfig(**pipe)

    roles = data.get("backends", {})
    chat = {role: build_chat_backend(role, roles.get(role, {}), base) for role in ("parser", "extractor", "generator")}
    judge = build_chat_backend("judge", roles["judge"], base) if "judge" in roles else None

    emb = data.get("embedder", {"kind": "hash"})
    if emb.get("kind", "hash") == "hash":
        embedder = HashEmbedder(int(emb.get("dim", 256)))
    elif emb["kind"] == "remote":
        embedder = RemoteEmbedBackend(emb["endpoint"], emb["model"], int(emb["dim"]), emb.get("api_key_env"))
    else:
        raise ConfigError(f"embedder: unknown kind {emb['kind']!r}")

    engines = build_engines(data.get("search", {}), base)
    fetch = data.get("fetch", {"kind": "http"})
    if fetch.get("kind", "http") == "http":
        fetcher = HttpFetcher(config.fetch_timeout, config.fetch_size_cap)
    elif fetch["kind"] == "fixture-dir":
        fetcher = FixtureFetcher(_path(base, fetch["root"]))
    else:
        raise ConfigError(f"fetch: unknown kind {fetch['kind']!r}")

    return config, Backends(chat["parser"], chat["extractor"], chat["generator"], embedder, engines, fetcher, judge=judge)


def demo_config_path() -> Path:
    return Path(str(resources.files("zerodex") / "data" / "demo" / "config.toml"))


def load_demo() -> tuple[PipelineConfig, Backends]:
    """The bundled all-mock configuration used when no config is given."""
    return load_config(demo_config_path())


def load_role(path: str | Path | None, role: str) -> ChatBackend:
    """Any ``[backends.<role>]`` section, falling back to the role's default mock."""
    section: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        data = tomllib.loads(path.read_text(encoding="utf-8"))
        section = data.get("backends", {}).get(role, {})
        base = path.resolve().parent
    return build_chat_backend(role, section, base)
