"""LLM-as-judge: order-swapped pairwise verdicts and single-answer grading."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .. import templates
from ..gateway import BudgetError, ChatBackend, ChatCall, complete


class EvalError(RuntimeError):
    pass


class Outcome(str, Enum):
    WIN = "WIN"
    TIE = "TIE"
    LOSE = "LOSE"
    PBIA = "PBIA"


_PAIR_RE = re.compile(r"\[\[([ABC])\]\]")
_RATING_RE = re.compile(r"Rating:\s*\[\[(\d+(?:\.\d+)?)\]\]")


def parse_pairwise(reply: str) -> str:
    """The last ``[[A]]``/``[[B]]``/``[[C]]`` marker in the judge's reply."""
    found = _PAIR_RE.findall(reply or "")
    if not found:
        raise EvalError(f"no verdict marker in judge reply: {reply[:80]!r}")
    return found[-1]


def parse_rating(reply: str) -> float:
    found = _RATING_RE.findall(reply or "")
    if not found:
        raise EvalError(f"no rating in judge reply: {reply[:80]!r}")
    return float(found[-1])


@dataclass(frozen=True)
class JudgeVerdict:
    outcome: Outcome
    first: str  # raw marker with A shown first
    second: str  # raw marker with the order swapped
    replies: tuple[str, str] = ("", "")

    def to_dict(self) -> dict:
        return {"outcome": self.outcome.value, "first": self.first, "second": self.second}


def _ask(backend: ChatBackend, call: ChatCall) -> str:
    try:
        return complete(backend, call).text
    except BudgetError as exc:
        return exc.partial_text
    except Exception as exc:  # noqa: BLE001
        raise EvalError(f"judge call failed: {type(exc).__name__}: {exc}") from exc


def pairwise_call(request: str, answer_a: str, answer_b: str, max_output_tokens: int = 1024) -> ChatCall:
    v = templates.JUDGE_PAIRWISE_VERSION
    return ChatCall(
        templates.render(v, "system"),
        templates.render(v, "user", request=request, answer_a=answer_a, answer_b=answer_b),
        0.0,
        None,
        max_output_tokens,
    )


def judge_pair(backend: ChatBackend, request: str, response_a: str, response_b: str) -> JudgeVerdict:
    """Judge twice with the order swapped; disagreement is positional bias.

    The outcome is stated from ``response_a``'s point of view.
    """
    if not response_a.strip() or not response_b.strip():
        raise ValueError("both responses must be non-empty")
    r1 = _ask(backend, pairwise_call(request, response_a, response_b))
    r2 = _ask(backend, pairwise_call(request, response_b, response_a))
    v1, v2 = parse_pairwise(r1), parse_pairwise(r2)
    as_a_first = {"A": Outcome.WIN, "B": Outcome.LOSE, "C": Outcome.TIE}[v1]
    as_a_second = {"A": Outcome.LOSE, "B": Outcome.WIN, "C": Outcome.TIE}[v2]
    outcome = as_a_first if as_a_first == as_a_second else Outcome.PBIA
    return JudgeVerdict(outcome, v1, v2, (r1, r2))


def grade(backend: ChatBackend, request: str, response: str, max_output_tokens: int = 1024) -> tuple[float, str]:
    """Single-answer score on a 1..10 scale plus the raw judge reply."""
    v = templates.JUDGE_SINGLE_VERSION
    call = ChatCall(
        templates.render(v, "system"),
        templates.render(v, "user", request=request, answer=response),
        0.0,
        None,
        max_output_tokens,
    )
    reply = _ask(backend, call)
    return parse_rating(reply), reply
