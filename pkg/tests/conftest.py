from datetime import datetime, timezone

import pytest

from zerodex.config import load_demo
from zerodex.request_parser import InferenceRequest
from zerodex.segmenter import TaggedDocument

# A lock buyer's guide: intro, one Xiaomi sentence, two Qin General
# sentences, three Desmann sentences.
LOCK_GUIDE = (
    "Smart door locks have become a popular upgrade for home security in recent years. "
    "The Xiaomi smart lock supports fingerprint, password and app unlocking at an entry-level price. "
    "Qin General offers a budget model with a semiconductor fingerprint sensor. "
    "Its battery lasts about 8.5 months under daily use. "
    "Desmann is a German brand known for mechanical lock cylinders. "
    "The Desmann smart lock pairs a C-grade cylinder with 3D face recognition. "
    "Its price is higher, but buyers get a five-year Desmann warranty."
)

DESMANN_REQUEST = "Tell me about the Desmann smart door lock"
HUAWEI_REQUEST = "Tell me about the Huawei smart door lock"

NOW = datetime(2026, 3, 1, 9, 30, tzinfo=timezone.utc)


@pytest.fixture
def lock_doc():
    return TaggedDocument.from_text(LOCK_GUIDE, url="https://locks.example.com/guide", snippet="Smart door locks compared")


@pytest.fixture
def desmann():
    return InferenceRequest("desmann", DESMANN_REQUEST, NOW)


@pytest.fixture
def huawei():
    return InferenceRequest("huawei", HUAWEI_REQUEST, NOW)


@pytest.fixture
def demo():
    return load_demo()


# acceptance verdicts, one line per criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
