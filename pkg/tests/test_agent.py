from __future__ import annotations

import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from findbench import agent
from findbench.agent import (
    AgentConfig,
    AgentError,
    EndpointError,
    ExemplarError,
    HttpChatClient,
    ScriptedClient,
    TokenBucket,
    extract_commands,
    load_exemplars,
    read_transcripts,
    replay,
    run_agent,
    write_transcripts,
)
from findbench.blackbox import open_session
from findbench.interpreters.base import program_to_json

DIALOGUES = json.loads((Path(__file__).parent / "fixtures" / "agent_dialogues.json").read_text())


def _run(d, ds):
    cfg = AgentConfig(mode=d["mode"], max_turns=d["max_turns"],
                      exemplar_path="exemplars.json" if d["mode"] != "aia" else None)
    session = open_session(ds, d["id"])
    tr = run_agent(cfg, session, ScriptedClient(d["replies"]), d.get("exemplars"))
    return tr, session


def test_fixture_has_ten_dialogues():
    assert len(DIALOGUES) == 10


@pytest.mark.parametrize("d", DIALOGUES, ids=[d["name"] for d in DIALOGUES])
def test_dialogue_conformance(golden_ds, d):
    tr, session = _run(d, golden_ds)
    exp = d["expected"]
    assert tr.commands == exp["commands"]
    assert tr.responses == exp["responses"]
    assert tr.status == exp["status"]
    assert tr.description == exp["description"]
    assert tr.domain == exp["domain"]
    assert tr.interactions == len(tr.commands)
    assert session.count == sum(len(agent.parse_command(c)) for c in tr.commands)
    it = tr.interpretation()
    assert program_to_json(tr.category, it.program) == exp["program"]


def test_milan_executes_nothing(golden_ds):
    d = next(d for d in DIALOGUES if d["mode"] == "milan")
    tr, session = _run(d, golden_ds)
    assert session.count == 0 and tr.commands == []
    assert "f(apple)" in tr.messages[1].content


@pytest.mark.parametrize("d", [d for d in DIALOGUES if d["expected"]["commands"]], ids=lambda d: d["name"])
def test_replay_reproduces_responses(golden_ds, d, tmp_path):
    tr, _ = _run(d, golden_ds)
    write_transcripts([tr], tmp_path / "t.jsonl", provenance={"seed": 0})
    (back,) = read_transcripts(tmp_path / "t.jsonl")
    assert back == tr
    assert replay(back, open_session(golden_ds, d["id"])) == tr.responses


def test_config_invariants():
    with pytest.raises(AgentError):
        AgentConfig(max_turns=0)
    with pytest.raises(AgentError):
        AgentConfig(mode="milan")
    with pytest.raises(AgentError):
        AgentConfig(mode="other")


def test_milan_refuses_without_exemplars(golden_ds):
    cfg = AgentConfig(mode="milan", exemplar_path="x.json")
    with pytest.raises(AgentError):
        run_agent(cfg, open_session(golden_ds, "g_rev"), ScriptedClient(["[DESCRIPTION] x"]), [])


def _write(tmp_path, obj):
    p = tmp_path / "ex.json"
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


def test_load_exemplars(tmp_path):
    ten = [f"w{i}" for i in range(10)]
    assert load_exemplars(_write(tmp_path, {"g_rev": ten})) == {"g_rev": ten}
    with pytest.raises(ExemplarError, match="9 exemplars"):
        load_exemplars(_write(tmp_path, {"g_rev": ten[:9]}))
    assert load_exemplars(_write(tmp_path, "")) == {}


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(list("abc ;|&$`()/.-rmls\n") + ["COMMAND:", "PYTHON", "rm -rf /", "$(ls)"]),
                max_size=40))
def test_shell_text_yields_no_execution_without_pattern(parts):
    text = "".join(parts)
    commands = extract_commands(text)
    for c in commands:
        assert f"PYTHON({c})" in text
    if "PYTHON(" not in text:
        assert commands == []


def test_fuzz_replies_never_touch_anything_but_the_session(golden_ds, monkeypatch):
    import subprocess

    def forbidden(*a, **k):
        raise AssertionError("process spawned")

    monkeypatch.setattr(subprocess, "run", forbidden)
    monkeypatch.setattr(subprocess, "Popen", forbidden)
    replies = ["`rm -rf /` and $(curl evil) ; COMMAND: bash -c ls", "COMMAND: os.system('ls')",
               "[DESCRIPTION] gives up"]
    session = open_session(golden_ds, "g_abs")
    tr = run_agent(AgentConfig(), session, ScriptedClient(replies))
    assert session.count == 0 and tr.interactions == 0


# ---------------------------------------------------------------------------
# endpoint client


def _chat_response(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_http_client_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("FB_TEST_KEY", "sekret")
    calls = []

    def handler(request: httpx.Request):
        calls.append(request)
        if len(calls) < 3:
            return httpx.Response(503)
        return _chat_response("hello")

    sleeps = []
    cfg = AgentConfig(endpoint="http://test/v1/chat/completions", model="m", credential_env="FB_TEST_KEY")
    client = HttpChatClient(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    assert client.complete([{"role": "user", "content": "hi"}]) == "hello"
    assert len(calls) == 3 and sleeps == [1.0, 2.0]
    body = json.loads(calls[0].content)
    assert body["model"] == "m" and body["messages"][0]["content"] == "hi" and body["temperature"] == 0.0
    assert calls[0].headers["Authorization"] == "Bearer sekret"


def test_http_client_aborts_after_three_attempts(golden_ds):
    cfg = AgentConfig(endpoint="http://test/x")
    client = HttpChatClient(cfg, transport=httpx.MockTransport(lambda r: httpx.Response(500)), sleep=lambda s: None)
    with pytest.raises(EndpointError):
        client.complete([])
    tr = run_agent(cfg, open_session(golden_ds, "g_rev"), client)
    assert tr.status == "aborted"


def test_token_bucket_rate():
    now = [0.0]
    starts = []

    def sleep(s):
        now[0] += s

    bucket = TokenBucket(rate=2.0, burst=1, clock=lambda: now[0], sleep=sleep)
    for _ in range(7):
        bucket.acquire()
        starts.append(now[0])
    # at most R starts in any one-second window
    for i, t in enumerate(starts):
        assert sum(1 for u in starts[i:] if u < t + 1.0 - 1e-12) <= 2
    assert starts[-1] == pytest.approx(3.0)
