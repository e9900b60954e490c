"""Chat-model driver for interactive interpretation dialogues.

The model runs experiments by writing ``COMMAND: PYTHON(<path> <input> ...)``;
each command is executed against the black box and its result is sent back
as a ``Response: ...`` message. The dialogue ends when the model answers with
``[DESCRIPTION]`` (plus optional ``[DOMAIN]`` and ``[CODE]``) and no command.
Nothing outside the ``PYTHON(...)`` pattern is ever executed.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shlex
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import httpx

from findbench import numeric, strings
from findbench.blackbox import BlackBoxSession, BudgetExceeded, UsageError
from findbench.interpreters.base import Interpretation
from findbench.relations import RelationSpec

log = logging.getLogger(__name__)

MODES = ("aia", "milan", "aia+milan")
EXEMPLARS_PER_FUNCTION = 10
DEFAULT_MAX_TURNS = 16
FUNCTION_PATH = "./function.py"

COMMAND_RE = re.compile(r"COMMAND:\s*PYTHON\(([^()\n]*)\)")
SECTION_RE = re.compile(r"\[(DESCRIPTION|DOMAIN|CODE)\]")

USAGE_HINT = (
    f"Your command could not be run. Use exactly: COMMAND: PYTHON({FUNCTION_PATH} input1 input2 ...) "
    "with at least one input; quote inputs that contain spaces."
)


class AgentError(RuntimeError):
    pass


class EndpointError(AgentError):
    pass


class ExemplarError(ValueError):
    pass


# ---------------------------------------------------------------------------
# prompts

SYSTEM_PROMPT = (
    "You investigate an unknown function by running experiments on it. "
    f"To call it, write a line of the form COMMAND: PYTHON({FUNCTION_PATH} input1 input2 ...). "
    "Every command is executed and its results are returned to you in a message that starts with "
    "'Response:'. Run as many experiments as you need, one reply at a time. "
    "When you are confident, reply without any command and give your answer in three sections: "
    "[DESCRIPTION] followed by a short explanation of what the function does, "
    "[DOMAIN] followed by any part of the input space where it behaves differently (or 'none'), "
    "and [CODE] followed by code that approximates it."
)

TASK_PROMPTS = {
    "numeric": (
        "The function f(x) takes a single real number and returns a real number or None. "
        "Probe it across the range -128 to 128. Look for a simple formula that matches its outputs, "
        "note whether repeated calls on the same input return different values, and report any "
        "interval where the outputs stop following that formula."
    ),
    "strings": (
        "The function f(x) takes a lowercase word and returns a string. "
        "Work out the sequence of string operations that produces its outputs, and write code "
        "that reproduces it exactly."
    ),
    "relations": (
        "The function f(x) takes a word or short phrase naming an entity and returns a related entity "
        "or 'undefined'. Work out which relation it implements, and describe any group of inputs "
        "for which it returns 'undefined' even though the relation would normally give an answer."
    ),
}

EXEMPLAR_PROMPT = "Here are the function's outputs on some example inputs:\n{pairs}"
MILAN_SUFFIX = (
    "You cannot run any experiments this time. Using only the examples above, answer now with "
    "the [DESCRIPTION], [DOMAIN] and [CODE] sections."
)


@dataclass
class AgentConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4"
    credential_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_turns: int = DEFAULT_MAX_TURNS
    mode: str = "aia"
    exemplar_path: str | None = None
    prompts: dict = field(default_factory=dict)
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 1.0
    rate: float | None = None  # requests started per second, shared across dialogues

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise AgentError("max turns must be at least 1")
        if self.mode not in MODES:
            raise AgentError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "milan" and not self.exemplar_path:
            raise AgentError("mode milan needs an exemplar file")
        if self.retries < 1:
            raise AgentError("retries must be at least 1")

    def system_prompt(self) -> str:
        return self.prompts.get("system", SYSTEM_PROMPT)

    def task_prompt(self, category: str) -> str:
        return self.prompts.get(category, TASK_PROMPTS[category])


def load_prompt_file(path: str | Path) -> dict:
    """JSON object overriding any of the keys ``system``, ``numeric``, ``strings``, ``relations``."""
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AgentError(f"{path}: {exc}") from exc
    allowed = {"system", *TASK_PROMPTS}
    if not isinstance(obj, dict) or not set(obj) <= allowed or not all(isinstance(v, str) for v in obj.values()):
        raise AgentError(f"{path}: prompt file must map {sorted(allowed)} to strings")
    return obj


# ---------------------------------------------------------------------------
# endpoint access


class TokenBucket:
    """At most ``rate`` acquisitions per second on average, bursts up to ``burst``."""

    def __init__(self, rate: float, burst: int = 1, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.burst = burst
        self.tokens = float(burst)
        self.clock = clock
        self.sleep = sleep
        self.last = clock()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self.lock:
                now = self.clock()
                self.tokens = min(self.burst, self.tokens + (now - self.last) * self.rate)
                self.last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                wait = (1 - self.tokens) / self.rate
            self.sleep(wait)


class ChatClient(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


class HttpChatClient:
    """Chat-completions client for OpenAI-compatible endpoints."""

    def __init__(self, config: AgentConfig, bucket: TokenBucket | None = None,
                 transport: httpx.BaseTransport | None = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.bucket = bucket or (TokenBucket(config.rate) if config.rate else None)
        self.sleep = sleep
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.credential_env, "") if config.credential_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.http = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)

    def complete(self, messages: list[dict]) -> str:
        body = {"model": self.config.model, "messages": messages, "temperature": self.config.temperature}
        last: Exception | None = None
        for attempt in range(self.config.retries):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            if self.bucket:
                self.bucket.acquire()
            try:
                resp = self.http.post(self.config.endpoint, json=body)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("endpoint attempt %d failed: %s", attempt + 1, exc)
        raise EndpointError(f"endpoint failed after {self.config.retries} attempts: {last}")

    def close(self) -> None:
        self.http.close()


class ScriptedClient:
    """Replays fixed replies in order (tests and offline demos)."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.calls: list[list[dict]] = []

    def complete(self, messages: list[dict]) -> str:
        self.calls.append([dict(m) for m in messages])
        if not self.replies:
            raise EndpointError("scripted client has no replies left")
        return self.replies.pop(0)


# ---------------------------------------------------------------------------
# protocol


def extract_commands(reply: str) -> list[str]:
    """Argument strings of every ``COMMAND: PYTHON(...)`` in the reply."""
    return [m.group(1) for m in COMMAND_RE.finditer(reply or "")]


def has_command_marker(reply: str) -> bool:
    return "COMMAND:" in (reply or "")


def parse_command(args: str) -> list[str]:
    """Inputs of one command; the first token names the function file and is ignored."""
    try:
        tokens = shlex.split(args)
    except ValueError as exc:
        raise UsageError(f"cannot tokenize command: {exc}") from exc
    if len(tokens) < 2:
        raise UsageError("command has no inputs")
    return tokens[1:]


def parse_sections(reply: str) -> dict[str, str]:
    """Text following each [DESCRIPTION] / [DOMAIN] / [CODE] marker (last occurrence wins)."""
    out: dict[str, str] = {}
    marks = list(SECTION_RE.finditer(reply or ""))
    for k, m in enumerate(marks):
        end = marks[k + 1].start() if k + 1 < len(marks) else len(reply)
        text = reply[m.end():end].strip()
        if text.startswith(":"):
            text = text[1:].strip()
        out[m.group(1)] = text
    return out


def parse_program(category: str, code: str):
    """Structured program when the [CODE] section holds one in the engine's JSON form."""
    text = code.strip()
    if text.startswith("```"):
        text = text.strip("`")
        text = text.split("\n", 1)[1] if "\n" in text else ""
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return None
    try:
        if category == "numeric":
            return numeric.from_json(obj)
        if category == "strings":
            return strings.from_json(obj)
        if category == "relations":
            return RelationSpec.from_json(obj)
    except (KeyError, TypeError, ValueError, AttributeError):
        return None
    return None


@dataclass
class Message:
    role: str
    content: str


@dataclass
class DialogueTranscript:
    function_id: str
    category: str
    mode: str
    messages: list[Message] = field(default_factory=list)
    commands: list[str] = field(default_factory=list)
    responses: list[str] = field(default_factory=list)
    interactions: int = 0
    status: str = "partial"  # complete | partial | aborted
    description: str = ""
    domain: str = "none"
    code: str = ""

    def chat(self) -> list[dict]:
        return [{"role": m.role, "content": m.content} for m in self.messages]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> DialogueTranscript:
        obj = dict(obj)
        obj.pop("provenance", None)
        obj["messages"] = [Message(**m) for m in obj.get("messages", [])]
        return cls(**obj)

    def interpretation(self) -> Interpretation:
        return Interpretation(
            id=self.function_id,
            category=self.category,
            description=self.description,
            domain=self.domain or "none",
            program=parse_program(self.category, self.code) if self.code else None,
            noise="unknown" if self.category == "numeric" else "none",
            queries=self.interactions,
            status="ok" if self.status == "complete" else "partial",
            interpreter=f"lm-agent:{self.mode}",
        )


def load_exemplars(path: str | Path) -> dict[str, list]:
    """Exemplar file: JSON object mapping function id to 10 inputs or [input, output] pairs."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ExemplarError(f"{path}: {exc}") from exc
    if not text.strip():
        return {}
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ExemplarError(f"{path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ExemplarError(f"{path}: expected an object keyed by function id")
    out = {}
    for fid, items in sorted(obj.items()):
        if not isinstance(items, list) or len(items) != EXEMPLARS_PER_FUNCTION:
            n = len(items) if isinstance(items, list) else "no"
            raise ExemplarError(f"{path}: {fid} has {n} exemplars, need {EXEMPLARS_PER_FUNCTION}")
        for it in items:
            ok = isinstance(it, str) or (isinstance(it, list) and len(it) == 2 and all(isinstance(v, str) for v in it))
            if not ok:
                raise ExemplarError(f"{path}: {fid}: exemplar must be an input string or an [input, output] pair")
        out[fid] = items
    return out


def exemplar_pairs(items: list, session: BlackBoxSession) -> list[tuple[str, str]]:
    """Resolve bare exemplar inputs with a side session, so the dialogue's query count stays untouched."""
    side = BlackBoxSession(session.spec, None, None, session.nonce, session.weights, session.tables)
    out = []
    for it in items:
        if isinstance(it, str):
            out.extend(side.query_pairs([it]))
        else:
            out.append((it[0], it[1]))
    return out


def _execute(session: BlackBoxSession, args: str) -> str:
    inputs = parse_command(args)
    try:
        return "Response: " + session.query(inputs)
    except BudgetExceeded as exc:
        return f"Response: error: {exc}"


def run_agent(config: AgentConfig, session: BlackBoxSession, client: ChatClient,
              exemplars: list | None = None) -> DialogueTranscript:
    cat = session.category
    tr = DialogueTranscript(session.function_id, cat, config.mode)
    if config.mode in ("milan", "aia+milan") and not exemplars:
        raise AgentError(f"mode {config.mode} needs exemplars for {session.function_id}")

    user = config.task_prompt(cat)
    if exemplars:
        pairs = exemplar_pairs(exemplars, session)
        user += "\n\n" + EXEMPLAR_PROMPT.format(pairs="\n".join(f"f({x}) = {y}" for x, y in pairs))
    if config.mode == "milan":
        user += "\n\n" + MILAN_SUFFIX
    tr.messages = [Message("system", config.system_prompt()), Message("user", user)]

    hinted = False
    for _turn in range(1 if config.mode == "milan" else config.max_turns):
        try:
            reply = client.complete(tr.chat())
        except EndpointError as exc:
            log.warning("%s: %s", session.function_id, exc)
            tr.status = "aborted"
            return tr
        tr.messages.append(Message("assistant", reply))
        commands = [] if config.mode == "milan" else extract_commands(reply)
        if not commands:
            if "[DESCRIPTION]" in reply:
                sec = parse_sections(reply)
                tr.description = sec.get("DESCRIPTION", "")
                tr.domain = sec.get("DOMAIN", "none") or "none"
                tr.code = sec.get("CODE", "")
                tr.status = "complete"
                return tr
            if config.mode == "milan":
                break
            if has_command_marker(reply) and not hinted:
                hinted = True
                tr.messages.append(Message("user", USAGE_HINT))
                continue
            if has_command_marker(reply):
                break
            tr.messages.append(Message("user", "Please continue with a command or give your final answer."))
            continue
        lines = []
        for args in commands:
            try:
                line = _execute(session, args)
            except UsageError:
                if hinted:
                    continue
                hinted = True
                line = USAGE_HINT
            else:
                tr.commands.append(args)
                tr.responses.append(line)
                tr.interactions += 1
            lines.append(line)
        if not lines:
            break
        tr.messages.append(Message("user", "\n".join(lines)))
    tr.status = "partial"
    return tr


def replay(transcript: DialogueTranscript, session: BlackBoxSession) -> list[str]:
    """Re-execute a transcript's commands on ``session``; returns the response lines."""
    return [_execute(session, args) for args in transcript.commands]


def write_transcripts(transcripts: list[DialogueTranscript], path: str | Path, provenance: dict | None = None) -> None:
    recs = [t.to_json() for t in transcripts]
    if provenance is not None:
        recs = [{**r, "provenance": provenance} for r in recs]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in recs))


def read_transcripts(path: str | Path) -> list[DialogueTranscript]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(DialogueTranscript.from_json(json.loads(line)))
    return out
