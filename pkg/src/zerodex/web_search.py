"""Search-engine adapters, page fetching and HTML-to-text reduction."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html import unescape
from html.parser import HTMLParser
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence
from urllib.parse import urlsplit, urlunsplit

import httpx

from .gateway import TransportError
from .request_parser import KeywordList, ParseOutcome

logger = logging.getLogger(__name__)

DEFAULT_N_PER_LIST = 10
DEFAULT_TIMEOUT = 8.0
DEFAULT_SIZE_CAP = 2 * 1024 * 1024
DEFAULT_MAX_PARALLEL_FETCH = 8
PER_HOST_LIMIT = 2


class SearchError(Exception):
    pass


class QuotaError(SearchError):
    """Search engine rate limit or quota exhausted."""


class FetchError(Exception):
    pass


class FetchTimeoutError(FetchError, TimeoutError):
    pass


class HttpError(FetchError):
    def __init__(self, status: int, url: str = ""):
        super().__init__(f"HTTP {status} for {url}")
        self.status = status


class TooLargeError(FetchError):
    pass


class NonHtmlError(FetchError):
    pass


@dataclass(frozen=True)
class SearchHit:
    url: str
    title: str
    snippet: str
    engine_rank: int
    source: str = "main"  # "main" or "aux:<lang>"

    def __post_init__(self):
        if not is_valid_url(self.url):
            raise ValueError(f"invalid url {self.url!r}")
        if self.engine_rank < 1:
            raise ValueError("engine_rank must be >= 1")

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.hit/v1",
            "url": self.url,
            "title": self.title,
            "snippet": self.snippet,
            "rank": self.engine_rank,
            "source": self.source,
        }


@dataclass(frozen=True)
class PlainDocument:
    url: str
    snippet: str
    body_text: str
    fetched_at: datetime
    source: str = "main"
    engine_rank: int = 1
    title: str = ""

    @property
    def empty(self) -> bool:
        return not self.body_text.strip()

    def to_dict(self) -> dict:
        return {
            "schema": "zerodex.doc/v1",
            "url": self.url,
            "title": self.title,
            "snippet": self.snippet,
            "body_text": self.body_text,
            "fetched_at": self.fetched_at.isoformat(),
            "source": self.source,
            "rank": self.engine_rank,
        }


def is_valid_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def canonical_url(url: str) -> str:
    """Lowercase scheme and host, drop the fragment, keep everything else."""
    parts = urlsplit(url)
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), parts.path, parts.query, ""))


# ---------------------------------------------------------------------------
# engines


class SearchEngineClient(Protocol):
    name: str

    def query(self, query: str, n: int, language: str | None = None) -> list[dict]:
        """Return raw hits ``{"url", "title", "snippet"}`` in engine order."""
        ...


class MockSearchEngine:
    """Canned SERPs from a JSONL file, one hit per line.

    Lines carry ``url``, ``title``, ``snippet``, ``rank`` and optionally
    ``query``; a line with a query only answers that exact query string.
    """

    def __init__(self, hits: Sequence[dict], name: str = "mock"):
        self.hits = list(hits)
        self.name = name
        self.queries: list[str] = []

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "MockSearchEngine":
        with open(path, encoding="utf-8") as fh:
            hits = [json.loads(line) for line in fh if line.strip()]
        return cls(hits, name=f"mock:{path}")

    def query(self, query: str, n: int, language: str | None = None) -> list[dict]:
        self.queries.append(query)
        matching = [h for h in self.hits if h.get("query") in (None, query)]
        matching.sort(key=lambda h: h.get("rank", 0))
        return matching[:n]


class _HttpEngine:
    endpoint: str
    name: str

    def __init__(self, api_key_env: str, endpoint: str | None = None, timeout: float = 10.0, client: httpx.Client | None = None):
        self.api_key_env = api_key_env
        if endpoint:
            self.endpoint = endpoint
        self.client = client or httpx.Client(timeout=timeout)

    def _key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise SearchError(f"environment variable {self.api_key_env} is not set")
        return key

    def _get(self, params: dict, headers: dict | None = None) -> dict:
        try:
            resp = self.client.get(self.endpoint, params=params, headers=headers or {})
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (402, 429):
            raise QuotaError(f"{self.name} quota exceeded ({resp.status_code})")
        if resp.status_code >= 400:
            raise SearchError(f"{self.name} returned {resp.status_code}")
        return resp.json()


class GoogleSearchEngine(_HttpEngine):
    """Google Programmable Search JSON API."""

    name = "google"
    endpoint = "https://www.googleapis.com/customsearch/v1"

    def __init__(self, api_key_env: str = "ZERODEX_GOOGLE_KEY", cx: str = "", **kwargs):
        super().__init__(api_key_env, **kwargs)
        self.cx = cx or os.environ.get("ZERODEX_GOOGLE_CX", "")

    def query(self, query: str, n: int, language: str | None = None) -> list[dict]:
        params = {"key": self._key(), "cx": self.cx, "q": query, "num": min(n, 10)}
        if language and language != "und":
            params["lr"] = f"lang_{language.split('-')[0]}"
        data = self._get(params)
        return [
            {"url": it.get("link", ""), "title": it.get("title", ""), "snippet": it.get("snippet", "")}
            for it in data.get("items", [])
        ]


class BingSearchEngine(_HttpEngine):
    """Bing Web Search v7 API."""

    name = "bing"
    endpoint = "https://api.bing.microsoft.com/v7.0/search"

    def __init__(self, api_key_env: str = "ZERODEX_BING_KEY", **kwargs):
        super().__init__(api_key_env, **kwargs)

    def query(self, query: str, n: int, language: str | None = None) -> list[dict]:
        params = {"q": query, "count": n, "responseFilter": "Webpages"}
        if language and language != "und":
            params["setLang"] = language
        data = self._get(params, headers={"Ocp-Apim-Subscription-Key": self._key()})
        return [
            {"url": it.get("url", ""), "title": it.get("name", ""), "snippet": it.get("snippet", "")}
            for it in (data.get("webPages") or {}).get("value", [])
        ]


def search(engine: SearchEngineClient, kwlist: KeywordList, n: int = DEFAULT_N_PER_LIST) -> list[SearchHit]:
    if n < 1:
        raise ValueError("n must be >= 1")
    raw = engine.query(kwlist.query, n, kwlist.language)
    hits: list[SearchHit] = []
    for item in raw:
        url = item.get("url", "")
        if not is_valid_url(url):
            logger.debug("dropping hit with invalid url %r", url)
            continue
        hits.append(SearchHit(url, item.get("title", ""), item.get("snippet", "") or "", len(hits) + 1, kwlist.source))
        if len(hits) == n:
            break
    return hits


# ---------------------------------------------------------------------------
# fetching

_HTML_TYPES = ("text/html", "application/xhtml+xml", "text/plain")


class Fetcher(Protocol):
    def __call__(self, url: str) -> str: ...


def _charset(content_type: str) -> str | None:
    m = re.search(r"charset=([\w.-]+)", content_type, re.I)
    return m.group(1) if m else None


def fetch(url: str, timeout: float = DEFAULT_TIMEOUT, size_cap: int = DEFAULT_SIZE_CAP, client: httpx.Client | None = None) -> str:
    """GET ``url`` and return the decoded page, enforcing the size cap while streaming."""
    own = client is None
    client = client or httpx.Client(follow_redirects=True)
    try:
        with client.stream("GET", url, timeout=timeout) as resp:
            if resp.status_code >= 400:
                raise HttpError(resp.status_code, url)
            ctype = resp.headers.get("content-type", "text/html")
            if not any(t in ctype.lower() for t in _HTML_TYPES):
                raise NonHtmlError(f"{url}: content-type {ctype}")
            declared = resp.headers.get("content-length")
            if declared and declared.isdigit() and int(declared) > size_cap:
                raise TooLargeError(f"{url}: {declared} bytes > {size_cap}")
            buf = bytearray()
            for chunk in resp.iter_bytes():
                buf.extend(chunk)
                if len(buf) > size_cap:
                    raise TooLargeError(f"{url}: more than {size_cap} bytes")
    except httpx.TimeoutException as exc:
        raise FetchTimeoutError(f"{url}: {exc}") from exc
    except httpx.TransportError as exc:
        raise FetchError(f"{url}: {exc}") from exc
    finally:
        if own:
            client.close()
    charset = _charset(ctype) or "utf-8"
    try:
        return bytes(buf).decode(charset, errors="replace")
    except LookupError:
        return bytes(buf).decode("utf-8", errors="replace")


class HttpFetcher:
    def __init__(self, timeout: float = DEFAULT_TIMEOUT, size_cap: int = DEFAULT_SIZE_CAP):
        self.timeout = timeout
        self.size_cap = size_cap
        self.client = httpx.Client(follow_redirects=True)

    def __call__(self, url: str) -> str:
        return fetch(url, self.timeout, self.size_cap, client=self.client)


class FixtureFetcher:
    """Serves pages from a directory indexed by ``pages.json`` (url -> file name)."""

    def __init__(self, root: str | os.PathLike, index: dict[str, str] | None = None):
        self.root = Path(root)
        if index is None:
            index = json.loads((self.root / "pages.json").read_text(encoding="utf-8"))
        self.index = {canonical_url(k): v for k, v in index.items()}
        self.requested: list[str] = []
        self._lock = threading.Lock()

    def __call__(self, url: str) -> str:
        with self._lock:
            self.requested.append(url)
        name = self.index.get(canonical_url(url))
        if name is None:
            raise HttpError(404, url)
        return (self.root / name).read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# html -> text

_SKIP_TAGS = frozenset(
    {"script", "style", "nav", "noscript", "template", "svg", "head", "iframe", "footer", "aside", "form", "button", "select"}
)
_BLOCK_TAGS = frozenset(
    {
        "p", "div", "br", "li", "ul", "ol", "dl", "dt", "dd", "h1", "h2", "h3", "h4", "h5", "h6",
        "tr", "table", "thead", "tbody", "section", "article", "main", "header", "blockquote", "pre",
        "figcaption", "figure", "hr", "address", "details", "summary", "body", "html", "caption", "td", "th",
    }
)
_VOID_TAGS = frozenset({"br", "hr", "img", "input", "meta", "link", "area", "base", "col", "embed", "source", "track", "wbr"})
_LINK_DENSITY_MAX = 0.5
_TAGLIKE_RE = re.compile(r"<[A-Za-z!/?]")


class _BodyParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._parts: list[str] = []
        self._link_chars = 0
        self._skip = 0
        self._in_link = 0

    def _flush(self):
        text = " ".join("".join(self._parts).split())
        if text and self._link_chars / len(text) <= _LINK_DENSITY_MAX:
            self.blocks.append(text)
        self._parts = []
        self._link_chars = 0

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            if tag not in _VOID_TAGS:
                self._skip += 1
            return
        if self._skip:
            return
        if tag in _BLOCK_TAGS:
            self._flush()
        elif tag == "a":
            self._in_link += 1

    def handle_startendtag(self, tag, attrs):
        if not self._skip and tag in _BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            if self._skip:
                self._skip -= 1
            return
        if self._skip:
            return
        if tag in _BLOCK_TAGS:
            self._flush()
        elif tag == "a" and self._in_link:
            self._in_link -= 1

    def handle_data(self, data):
        if self._skip:
            return
        self._parts.append(data)
        if self._in_link:
            self._link_chars += len(" ".join(data.split()))

    def close(self):
        super().close()
        self._flush()


def extract_body(html: str) -> str:
    """Reduce an HTML page to plain text, one block per line.

    Text without any markup is treated as already plain: each line is
    whitespace-collapsed and blank lines are dropped, which makes the function
    idempotent on its own output.
    """
    if not _TAGLIKE_RE.search(html):
        return "\n".join(" ".join(line.split()) for line in html.splitlines() if line.strip())
    parser = _BodyParser()
    parser.feed(html)
    parser.close()
    return "\n".join(parser.blocks)


# ---------------------------------------------------------------------------
# gather


@dataclass
class _HostLimiter:
    limit: int = PER_HOST_LIMIT
    _sems: dict[str, threading.Semaphore] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def for_url(self, url: str) -> threading.Semaphore:
        host = urlsplit(url).netloc.lower()
        with self._lock:
            if host not in self._sems:
                self._sems[host] = threading.Semaphore(self.limit)
            return self._sems[host]


def gather(
    outcome: ParseOutcome,
    engines: Iterable[SearchEngineClient],
    n_per_list: int = DEFAULT_N_PER_LIST,
    fetcher: Fetcher | None = None,
    *,
    max_parallel: int = DEFAULT_MAX_PARALLEL_FETCH,
    per_host: int = PER_HOST_LIMIT,
    trace: list | None = None,
    clock: Callable[[], datetime] | None = None,
) -> list[PlainDocument]:
    """Search every keyword list on every engine, dedupe, fetch and reduce to text.

    Main-list hits come first in engine order, then auxiliary hits. Individual
    search or fetch failures become trace entries and never abort the gather.
    """
    if not outcome.needs_search:
        raise ValueError("gather requires an outcome with needs_search=True")
    engines = list(engines)
    fetcher = fetcher or HttpFetcher()
    clock = clock or (lambda: datetime.now(timezone.utc))
    notes = trace if trace is not None else []

    ordered = [outcome.main] + outcome.auxiliary
    unique: list[SearchHit] = []
    seen: set[str] = set()
    for kwlist in ordered:
        for engine in engines:
            try:
                hits = search(engine, kwlist, n_per_list)
            except (SearchError, TransportError) as exc:
                notes.append({"event": "search_failed", "engine": getattr(engine, "name", "?"), "list": kwlist.source, "error": str(exc)})
                continue
            for hit in hits:
                key = canonical_url(hit.url)
                if key not in seen:
                    seen.add(key)
                    unique.append(hit)

    limiter = _HostLimiter(per_host)

    def work(hit: SearchHit):
        try:
            with limiter.for_url(hit.url):
                html = fetcher(hit.url)
            return PlainDocument(hit.url, hit.snippet, extract_body(html), clock(), hit.source, hit.engine_rank, hit.title)
        except Exception as exc:  # noqa: BLE001 - every per-document failure degrades
            return exc

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        results = list(pool.map(work, unique))

    docs: list[PlainDocument] = []
    for hit, res in zip(unique, results):
        if isinstance(res, Exception):
            notes.append({"event": "fetch_failed", "url": hit.url, "error": f"{type(res).__name__}: {res}"})
        else:
            if res.empty:
                notes.append({"event": "empty_body", "url": hit.url})
            docs.append(res)
    return docs
