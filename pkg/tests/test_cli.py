import io
import json
from importlib import resources
from pathlib import Path

import pytest

from conftest import DESMANN_REQUEST, LOCK_GUIDE
from planted import planted_log
from zerodex.cli import main
from zerodex.segmenter import TaggedDocument

DEMO = Path(str(resources.files("zerodex") / "data" / "demo"))
GOLDEN = (Path(__file__).parent / "golden" / "demo_answer.json").read_text(encoding="utf-8")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_docs(path, docs):
    path.write_text("".join(json.dumps(d.to_dict()) + "\n" for d in docs))
    return str(path)


def test_answer_matches_golden(capsys):
    code, out, _ = run(capsys, "answer", "--request", str(DEMO / "request.json"), "--no-timings")
    assert code == 0 and out == GOLDEN


def test_answer_plain_text_request(capsys, tmp_path):
    (tmp_path / "req.txt").write_text(DESMANN_REQUEST + "\n")
    code, out, _ = run(capsys, "answer", "--request", str(tmp_path / "req.txt"))
    data = json.loads(out)
    assert code == 0 and data["id"] == "cli"
    assert all("duration_ms" in s for s in data["trace"])


def test_parse(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(DESMANN_REQUEST))
    code, out, _ = run(capsys, "parse", "--request", "-", "--now", "2026-03-01T09:30:00Z")
    assert code == 0 and "Desmann" in out


def test_segment_stdin(capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(LOCK_GUIDE))
    code, out, _ = run(capsys, "segment")
    assert code == 0 and out.startswith("<TAG-1>") and "<TAG-7>" in out
    monkeypatch.setattr("sys.stdin", io.StringIO("Price is 8.5 dollars. Done."))
    code, out, _ = run(capsys, "segment", "--jsonl")
    rows = [json.loads(line) for line in out.splitlines()]
    assert [r["tag_id"] for r in rows] == [1, 2] and "8.5" in rows[0]["text"]


def test_search_mock_engine(capsys, monkeypatch):
    monkeypatch.chdir(DEMO)
    code, out, _ = run(capsys, "search", "--keywords", "smart lock", "--engine", "mock:serp.jsonl", "-n", "2")
    hits = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(hits) == 2 and hits[0]["url"].startswith("https://locks.example.com")


def test_rerank_and_extract(capsys, tmp_path):
    docs = [TaggedDocument.from_text(LOCK_GUIDE, url="https://a.example", snippet="Desmann lock"),
            TaggedDocument.from_text("Cooking rice takes patience. Rinse it first.", url="https://b.example", snippet="rice")]
    path = write_docs(tmp_path / "docs.jsonl", docs)
    code, out, _ = run(capsys, "rerank", "--keywords", "Desmann smart lock", "--docs", path, "--k", "1")
    assert code == 0 and json.loads(out)
    (tmp_path / "req.txt").write_text(DESMANN_REQUEST)
    code, out, _ = run(capsys, "extract", "--request", str(tmp_path / "req.txt"), "--doc", path)
    rows = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(rows) == 2
    code, out, _ = run(capsys, "extract", "--request", str(tmp_path / "req.txt"), "--doc", path, "--dry-run")
    assert "<TAG-7>" in out and DESMANN_REQUEST in out


def test_eval_synth_and_run(capsys, tmp_path):
    cases = tmp_path / "cases.jsonl"
    code, _, err = run(capsys, "eval", "synth", "--lengths", "1500", "--depths", "0.5", "--out", str(cases))
    assert code == 0 and "wrote" in err
    n = len(cases.read_text().splitlines())
    code, out, _ = run(capsys, "eval", "run", "--system", "naive", "--cases", str(cases), "--out", str(tmp_path / "res"), "--parallel", "2")
    summary = json.loads(out)
    assert code == 0 and sum(summary["verdicts"].values()) + summary["errors"] == n


def test_eval_convert(capsys, tmp_path):
    rec = {"id": "m1", "question": "Which?", "documents": [{"title": "t", "sentences": ["A.", "B."]}], "answers": [[0, 1]]}
    (tmp_path / "in.jsonl").write_text(json.dumps(rec) + "\n")
    code, _, _ = run(capsys, "eval", "convert", "--format", "multiple", "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "o.jsonl"))
    assert code == 0 and len((tmp_path / "o.jsonl").read_text().splitlines()) == 1


def test_prep_instructions(capsys, tmp_path):
    raw = tmp_path / "raw.jsonl"
    raw.write_text("".join(json.dumps(r) + "\n" for r in planted_log(30)))
    code, out, _ = run(capsys, "prep", "instructions", "--raw", str(raw), "--out", str(tmp_path / "o"), "--per-request", "3", "--tolerance", "0.05")
    assert code == 0 and json.loads(out)["counts"]
    assert (tmp_path / "o" / "instruction_b.jsonl").exists()


def test_prep_dpo(capsys, tmp_path):
    doc = TaggedDocument.from_text(LOCK_GUIDE, url="https://a.example")
    (tmp_path / "c.jsonl").write_text(json.dumps({"id": "c1", "request": DESMANN_REQUEST, "docs": [doc.to_dict()]}) + "\n")
    code, out, _ = run(capsys, "prep", "dpo", "--cases", str(tmp_path / "c.jsonl"), "--out", str(tmp_path / "o"))
    m = json.loads(out)
    assert code == 0 and m["records"] + m["discards"] == 2


def test_errors_exit_nonzero(capsys, tmp_path):
    code, _, err = run(capsys, "answer", "--request", str(tmp_path / "missing.json"))
    assert code == 1 and err.startswith("error:")
    bad = tmp_path / "bad.toml"
    bad.write_text("[pipeline]\nk = 0\n")
    code, _, err = run(capsys, "answer", "--request", str(DEMO / "request.json"), "--config", str(bad))
    assert code == 1
    with pytest.raises(SystemExit):
        main(["nope"])
