import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from amricl.prompting import (Demonstration, EchoClient, FixtureError, FixtureMissing, FixtureStore, HttpClient,
                              LlmRequest, PromptError, PromptSpec, RecordingClient, ReplayClient, build_prompt,
                              normalize_label, prompt_key)
from conftest import DATA

LABELS = ("Cause-Effect", "Content-Container", "Member-Collection", "Product-Producer")

GOLDEN_DEMOS = [
    Demonstration("The fire was caused by the smoke that day.", "fire", "smoke", "Cause-Effect"),
    Demonstration("The honey was kept inside the jar.", "jar", "honey", "Content-Container"),
    Demonstration("The singer belongs to the choir.", "choir", "singer", "Member-Collection"),
    Demonstration("The bakery made the bread last year.", "bakery", "bread", "Product-Producer"),
    Demonstration("The flood was caused by the storm that day.", "flood", "storm", "Cause-Effect"),
    Demonstration("The tea and the cup were both mentioned.", "cup", "tea", None),
    Demonstration("The wine was kept inside the bottle.", "bottle", "wine", "Content-Container"),
    Demonstration("The soldier belongs to the army.", "army", "soldier", "Member-Collection"),
    Demonstration("The farm made the milk last year.", "farm", "milk", "Product-Producer"),
    Demonstration("The fever was caused by the virus that day.", "fever", "virus", "Cause-Effect"),
]
GOLDEN_TEST = Demonstration("The rum was kept inside the box.", "box", "rum")


def spec():
    return PromptSpec.from_template(LABELS)


def test_golden_prompt_k10():
    expected = (DATA / "golden_prompt_k10.txt").read_text(encoding="utf-8")
    assert build_prompt(spec(), GOLDEN_DEMOS, GOLDEN_TEST) == expected


def test_prompt_structure():
    s = spec()
    zero = build_prompt(s, [], GOLDEN_TEST)
    assert zero.startswith("Given a context, determine the relation")
    assert "candidate relations: Cause-Effect, Content-Container, Member-Collection, Product-Producer." in zero
    assert "output NULL." in zero
    assert zero.endswith("Relation:") and zero.count("Context:") == 1
    full = build_prompt(s, GOLDEN_DEMOS, GOLDEN_TEST)
    assert full.count("Context:") == 11 and full.count("Relation: ") == 10
    assert "Relation: NULL\n" in full


def test_prompt_injective_over_demo_order():
    s = spec()
    demos = GOLDEN_DEMOS[:4]
    outs = {build_prompt(s, list(p), GOLDEN_TEST) for p in itertools.permutations(demos)}
    assert len(outs) == 24


def test_spec_validation():
    with pytest.raises(PromptError):
        PromptSpec(("NULL", "A"))
    with pytest.raises(PromptError):
        PromptSpec(("A", "A"))
    with pytest.raises(PromptError):
        PromptSpec(("A",), demo_template="{context} {mood}")
    with pytest.raises(PromptError):
        build_prompt(spec(), [Demonstration("c", "s", "o", "Other")], GOLDEN_TEST)


def test_custom_template(tmp_path):
    path = tmp_path / "t.toml"
    path.write_text('version = 2\ninstruction = "Labels: {labels} or {null}"\n'
                    'demo = "{subject}|{object}|{label}"\nquery = "{subject}|{object}|"\n'
                    'label_separator = "/"\nblock_separator = "\\n\\n"\n')
    s = PromptSpec.from_template(("A", "B"), "NONE", path)
    out = build_prompt(s, [Demonstration("c", "x", "y", None)], Demonstration("c", "u", "v"))
    assert out == "Labels: A/B or NONE\n\n\nx|y|NONE\n\nu|v|"


@pytest.mark.parametrize("raw,label,flag", [
    (" Cause-Effect\n", "Cause-Effect", False),
    ("cause-effect.", "Cause-Effect", False),
    ("null", "NULL", False),
    ("None", "NULL", False),
    ("No relation.", "NULL", False),
    ("I think it is Content-Container.", "NULL", True),
    ("", "NULL", True),
])
def test_normalize_examples(raw, label, flag):
    assert normalize_label(raw, spec()) == (label, flag)


def test_normalize_render_identity():
    s = spec()
    for lab in (*LABELS, None):
        assert normalize_label(s.render_label(lab), s) == (s.render_label(lab), False)


def test_prompt_keys():
    assert prompt_key("abc") != prompt_key("abd")
    assert len(prompt_key("")) == 64
    assert LlmRequest("x").params() == {"temperature": 0.0, "top_p": 1.0, "frequency_penalty": 0.0,
                                        "presence_penalty": 0.0, "best_of": 1}


def test_fixture_store_round_trip(tmp_path):
    path = tmp_path / "fx.jsonl"
    store = FixtureStore(path)
    store.put("k1", "Cause-Effect", {"temperature": 0.0}, created_at="2026-01-01T00:00:00+00:00")
    assert store.lookup("k1") == "Cause-Effect"
    again = FixtureStore(path)
    assert "k1" in again and again.lookup("k1") == "Cause-Effect"
    row = json.loads(path.read_text().splitlines()[0])
    assert set(row) == {"key", "response", "params", "created_at"}
    with pytest.raises(FixtureMissing, match="fixture missing for key\\(s\\): nope"):
        again.lookup("nope")


def test_fixture_store_corrupt_line(tmp_path):
    path = tmp_path / "fx.jsonl"
    path.write_text('{"key": "a", "response": "x", "params": {}}\n{oops\n')
    with pytest.raises(FixtureError, match=":2:"):
        FixtureStore(path)


def test_replay_and_recording(tmp_path):
    store = FixtureStore(tmp_path / "fx.jsonl")
    rec = RecordingClient(EchoClient("Member-Collection"), store)
    assert rec.send(LlmRequest("p1")).text == "Member-Collection"
    replay = ReplayClient(FixtureStore(tmp_path / "fx.jsonl"))
    assert replay.send(LlmRequest("p1")).text == "Member-Collection"
    assert replay.missing(["p1", "p2"]) == [prompt_key("p2")]
    with pytest.raises(FixtureMissing):
        replay.send(LlmRequest("p2"))


class _Handler(BaseHTTPRequestHandler):
    seen = []
    active = 0
    peak = 0
    lock = threading.Lock()

    def do_POST(self):
        cls = type(self)
        with cls.lock:
            cls.active += 1
            cls.peak = max(cls.peak, cls.active)
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        cls.seen.append((self.headers.get("Authorization"), body))
        threading.Event().wait(0.05)
        out = json.dumps({"choices": [{"message": {"content": "Cause-Effect"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)
        with cls.lock:
            cls.active -= 1

    def log_message(self, *args):
        pass


def test_http_client_env_and_bounded_concurrency(monkeypatch):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        monkeypatch.setenv("LLM_ENDPOINT", f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions")
        monkeypatch.setenv("LLM_API_KEY", "secret")
        monkeypatch.setenv("LLM_MODEL", "test-model")
        client = HttpClient(max_in_flight=2)
        threads = [threading.Thread(target=lambda: client.send(LlmRequest("hello"))) for _ in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert client.send(LlmRequest("hi")).text == "Cause-Effect"
    finally:
        server.shutdown()
        server.server_close()
    auth, body = _Handler.seen[-1]
    assert auth == "Bearer secret"
    assert body["model"] == "test-model" and body["temperature"] == 0.0 and body["top_p"] == 1.0
    assert body["messages"] == [{"role": "user", "content": "hi"}]
    assert _Handler.peak <= 2


def test_http_client_requires_env(monkeypatch):
    for var in ("LLM_ENDPOINT", "LLM_MODEL", "LLM_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(PromptError):
        HttpClient()
