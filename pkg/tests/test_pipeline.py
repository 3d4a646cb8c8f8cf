import dataclasses
import json
from pathlib import Path

import pytest

from conftest import NOW
from zerodex.config import demo_config_path
from zerodex.gateway import CallableBackend, ScriptedBackend, SequenceBackend
from zerodex.pipeline import STAGES, GenerationError, PipelineConfig, answer, count_prompt_tokens
from zerodex.request_parser import InferenceRequest

GOLDEN = Path(__file__).parent / "golden" / "demo_answer.json"
DEMO_REQUEST = demo_config_path().parent / "request.json"


def demo_request():
    return InferenceRequest.from_dict(json.loads(DEMO_REQUEST.read_text()))


def stages(result):
    return [r.stage for r in result.trace]


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(s in it for s in sub)


def test_demo_matches_golden(demo):
    config, backends = demo
    assert answer(demo_request(), config, backends).to_json(timings=False) + "\n" == GOLDEN.read_text()


def test_desmann_gets_evidence(demo, desmann):
    config, backends = demo
    res = answer(desmann, config, backends)
    assert res.augmented
    assert stages(res) == list(STAGES)
    extract = next(r for r in res.trace if r.stage == "extract")
    assert [5, 6, 7] in extract.counts["tags"].values()
    assert "five-year Desmann warranty" in res.text


def test_huawei_degrades_to_plain_answer(demo, huawei):
    config, backends = demo
    res = answer(huawei, config, backends)
    assert not res.augmented and res.sources == []
    assert stages(res) == list(STAGES)
    merge = next(r for r in res.trace if r.stage == "merge")
    assert "no_evidence" in merge.flags
    assert "No reference material" in res.text


def test_no_search_short_circuits(demo):
    config, backends = demo
    res = answer(InferenceRequest("hi", "hello", NOW), config, backends)
    assert stages(res) == ["parse", "generate"]
    assert res.token_usage["extract"]["calls"] == 0
    assert not res.augmented


def test_parser_failure_degrades(demo, desmann):
    config, backends = demo
    broken = dataclasses.replace(backends, parser=SequenceBackend(["junk", "junk"]))
    res = answer(desmann, config, broken)
    assert stages(res) == ["parse", "generate"]
    assert "parser_failed" in res.trace[0].flags


def test_no_documents_degrades(demo, desmann):
    config, backends = demo
    res = answer(desmann, config, dataclasses.replace(backends, engines=[]))
    assert stages(res) == ["parse", "search", "generate"]
    assert "no_documents" in res.trace[1].flags


def test_extractor_failures_degrade(demo, desmann):
    config, backends = demo
    res = answer(desmann, config, dataclasses.replace(backends, extractor=ScriptedBackend({})))
    assert not res.augmented
    assert is_subsequence(["parse", "search", "rerank", "extract", "merge", "generate"], stages(res))
    assert res.trace[3].warnings


def test_generation_failure_raises_with_trace(demo, desmann):
    config, backends = demo
    with pytest.raises(GenerationError) as info:
        answer(desmann, config, dataclasses.replace(backends, generator=ScriptedBackend({})))
    assert [r.stage for r in info.value.trace][-1] == "generate"


def test_truncated_generation_is_kept(demo, desmann):
    config, backends = demo
    cfg = dataclasses.replace(config, generation_max_tokens=5)
    res = answer(desmann, cfg, backends)
    assert "generation truncated at max_output_tokens" in res.trace[-1].warnings
    assert res.token_usage["generate"]["output_tokens"] == 5


def test_token_usage_totals(demo, desmann):
    config, backends = demo
    usage = answer(desmann, config, backends).token_usage
    for key in ("input_tokens", "output_tokens", "calls"):
        assert usage["total"][key] == sum(usage[s][key] for s in ("parse", "extract", "generate"))


def test_merge_prompt_tokens_match_generator_input(demo, desmann):
    config, backends = demo
    res = answer(desmann, config, backends)
    merge = next(r for r in res.trace if r.stage == "merge")
    assert merge.counts["prompt_tokens"] == res.trace[-1].counts["prompt_tokens"]


def test_generator_sees_request_and_evidence(demo, desmann):
    config, backends = demo
    seen = []
    gen = CallableBackend(lambda call: seen.append(call.user_text) or "ok")
    answer(desmann, config, dataclasses.replace(backends, generator=gen))
    assert desmann.text in seen[0] and "[Source 1]" in seen[0]


def test_timings_flag_controls_durations(demo, desmann):
    config, backends = demo
    res = answer(desmann, config, backends)
    assert "duration_ms" in json.loads(res.to_json())["trace"][0]
    assert "duration_ms" not in json.loads(res.to_json(timings=False))["trace"][0]


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(k=0)
    with pytest.raises(ValueError):
        PipelineConfig(fetch_timeout=0)


def test_count_prompt_tokens_is_whole_prompt():
    from zerodex.extractor import EnrichedPrompt

    p = EnrichedPrompt("a b c")
    assert count_prompt_tokens(p) > 3
