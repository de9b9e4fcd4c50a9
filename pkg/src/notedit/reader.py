"""Pluggable language-model backends.

Two implementations of the reader contract live here. `MockReader` is a
deterministic oracle over a small world of (subject, relation, object)
facts; it is perfectly grounded on its prompt context, robust to irrelevant
notes, and enables fully offline end-to-end runs. `HttpReader` talks to a
chat-completions style endpoint and is meant for real language models.

Mock answering rules
--------------------
Prompts are parsed back into (template kind, context lines, question or
hypothesis). Questions match "What is the <relation> of <subject>?",
two-hop questions "What is the <r2> of the <r1> of <subject>?", and boolean
questions "Is it true that <statement>?"; statements and hypotheses match
"The <relation> of <subject> is <object>." All matching is case-insensitive.

With context, the question is resolved against the context triples first.
A two-hop question resolves hop 1 then hop 2; hop 2 may fall back to
parametric facts only when hop 1 was answered from context. A resolution
that would be purely parametric yields the task's irrelevance marker
instead. Without context the question is resolved against parametric facts
alone, answering "unknown" on a miss. A fact-checking hypothesis is checked
against the context: a matching triple answers "Yes", a triple with the
same subject and relation but a different object answers "No", and anything
else answers the marker.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import requests

from .core import NoteditError, fnv1a_64
from .prompts import (
    FC_IRRELEVANCE_MARKER,
    QA_IRRELEVANCE_MARKER,
    TemplateKind,
)

UNKNOWN_ANSWER = "unknown"
READER_API_KEY_ENV = "READER_API_KEY"

DEFAULT_TIMEOUT = 30.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF = 0.5
DEFAULT_MAX_IN_FLIGHT = 4


class ReaderError(NoteditError):
    """Base class for reader backend failures."""


class BackendError(ReaderError):
    """The backend answered with a non-retryable error or a bad payload."""

    def __init__(self, status: int | None, body: str) -> None:
        super().__init__(f"backend error (status={status}): {body[:200]}")
        self.status = status
        self.body = body


class BackendTimeoutError(ReaderError):
    """The backend did not answer within the configured budget."""


class UnrecognizedPromptError(NoteditError):
    """A prompt does not match any known template."""


class TruncationWarning(UserWarning):
    """Emitted when an answer is cut at the output-token cap."""


@dataclass(frozen=True)
class ReaderRequest:
    """One completion request; decoding is always greedy."""

    prompt: str
    max_tokens: int
    decode: str = "greedy"

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.decode != "greedy":
            raise ValueError("only greedy decoding is supported")


class Reader(Protocol):
    reader_id: str

    def complete(self, request: ReaderRequest) -> str: ...


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cap `text` at `max_tokens` whitespace-delimited tokens.

    Token counting is whitespace-based because subword vocabularies are
    backend-specific. Warns with TruncationWarning when the cap bites.
    """
    tokens = text.split()
    if len(tokens) <= max_tokens:
        return text
    warnings.warn(
        f"answer truncated from {len(tokens)} to {max_tokens} tokens", TruncationWarning, stacklevel=2
    )
    return " ".join(tokens[:max_tokens])


@dataclass(frozen=True)
class FactTriple:
    """A (subject, relation, object) fact."""

    subject: str
    relation: str
    obj: str

    def __post_init__(self) -> None:
        for name in ("subject", "relation", "obj"):
            if not getattr(self, name).strip():
                raise ValueError(f"fact triple field {name!r} must be non-empty")

    def statement(self) -> str:
        """Canonical declarative rendering of the fact."""
        return f"The {self.relation} of {self.subject} is {self.obj}."


class MockWorld:
    """Parametric memory of the mock base model: a set of fact triples."""

    def __init__(self, facts: Iterable[FactTriple] = ()) -> None:
        self._facts: dict[tuple[str, str], FactTriple] = {}
        for fact in facts:
            self.add(fact)

    def add(self, fact: FactTriple) -> None:
        key = (fact.subject.lower(), fact.relation.lower())
        existing = self._facts.get(key)
        if existing is not None and existing.obj.lower() != fact.obj.lower():
            raise ValueError(
                f"conflicting facts for ({fact.subject!r}, {fact.relation!r}): "
                f"{existing.obj!r} vs {fact.obj!r}"
            )
        self._facts.setdefault(key, fact)

    def lookup(self, subject: str, relation: str) -> str | None:
        fact = self._facts.get((subject.lower(), relation.lower()))
        return fact.obj if fact is not None else None

    @property
    def facts(self) -> tuple[FactTriple, ...]:
        return tuple(sorted(self._facts.values(), key=lambda f: (f.subject, f.relation, f.obj)))

    def __len__(self) -> int:
        return len(self._facts)

    def digest(self) -> int:
        payload = "\n".join(f"{f.subject}\t{f.relation}\t{f.obj}" for f in self.facts)
        return fnv1a_64(payload)

    def to_json(self) -> list[dict[str, str]]:
        return [
            {"subject": f.subject, "relation": f.relation, "object": f.obj} for f in self.facts
        ]

    @classmethod
    def from_json(cls, rows: Iterable[Mapping[str, str]]) -> "MockWorld":
        return cls(
            FactTriple(subject=row["subject"], relation=row["relation"], obj=row["object"])
            for row in rows
        )


def save_world(world: MockWorld, path: str | Path) -> None:
    Path(path).write_text(json.dumps(world.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_world(path: str | Path) -> MockWorld:
    return MockWorld.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# Prompt structure markers, derived from the templates in prompts.py.
_MRC_PREFIX = 'Read this and answer the question. If the question is unanswerable, say "unanswerable".\n\n'
_QA_NO_CONTEXT_PREFIX = "Please answer this question: "
_FC_WITH_CONTEXT_RE = re.compile(
    r'\A(?P<context>.*)\n\nBased on the paragraph, can we conclude that "(?P<hypothesis>.*)"\?'
    r"\n\nOPTIONS:\n- Yes\n- It's impossible to say\n- No\Z",
    re.DOTALL,
)
_FC_NO_CONTEXT_RE = re.compile(r"\AIs it true that (?P<hypothesis>.*)\?\Z", re.DOTALL)

_TWO_HOP_RE = re.compile(
    r"^\s*what\s+is\s+the\s+(?P<r2>.+?)\s+of\s+the\s+(?P<r1>.+?)\s+of\s+(?P<subject>.+?)\s*\?+\s*$",
    re.IGNORECASE,
)
_SINGLE_HOP_RE = re.compile(
    r"^\s*what\s+is\s+the\s+(?P<relation>.+?)\s+of\s+(?P<subject>.+?)\s*\?+\s*$",
    re.IGNORECASE,
)
_BOOLEAN_RE = re.compile(r"^\s*is\s+it\s+true\s+that\s+(?P<statement>.+?)\s*\?*\s*$", re.IGNORECASE)
_TRIPLE_RE = re.compile(
    r"^\s*the\s+(?P<relation>.+?)\s+of\s+(?P<subject>.+?)\s+is\s+(?P<obj>.+?)\s*\.?\s*$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ParsedPrompt:
    """Structured view of a rendered prompt."""

    kind: TemplateKind
    context_lines: tuple[str, ...]
    query: str


def mock_parse(prompt: str) -> ParsedPrompt:
    """Invert the prompt templates exactly.

    Raises UnrecognizedPromptError when the prompt matches none of them.
    """
    if prompt.startswith(_MRC_PREFIX):
        body = prompt[len(_MRC_PREFIX):]
        context, sep, question = body.rpartition("\n\n")
        if not sep:
            raise UnrecognizedPromptError("malformed reading-comprehension prompt")
        lines = tuple(line for line in context.split("\n") if line)
        return ParsedPrompt(TemplateKind.MRC_WITH_CONTEXT, lines, question)
    if prompt.startswith(_QA_NO_CONTEXT_PREFIX):
        return ParsedPrompt(TemplateKind.QA_NO_CONTEXT, (), prompt[len(_QA_NO_CONTEXT_PREFIX):])
    fc_match = _FC_WITH_CONTEXT_RE.match(prompt)
    if fc_match is not None:
        lines = tuple(line for line in fc_match.group("context").split("\n") if line)
        return ParsedPrompt(TemplateKind.FC_WITH_CONTEXT, lines, fc_match.group("hypothesis"))
    no_ctx_match = _FC_NO_CONTEXT_RE.match(prompt)
    if no_ctx_match is not None:
        return ParsedPrompt(TemplateKind.FC_NO_CONTEXT, (), no_ctx_match.group("hypothesis"))
    raise UnrecognizedPromptError(f"prompt matches no known template: {prompt[:60]!r}")


def _parse_triple(text: str) -> tuple[str, str, str] | None:
    match = _TRIPLE_RE.match(text)
    if match is None:
        return None
    return (
        match.group("subject").strip(),
        match.group("relation").strip(),
        match.group("obj").strip(),
    )


def _context_triples(lines: Iterable[str]) -> dict[tuple[str, str], str]:
    triples: dict[tuple[str, str], str] = {}
    for line in lines:
        parsed = _parse_triple(line)
        if parsed is None:
            continue  # Unparseable notes carry no facts the mock can ground on.
        subject, relation, obj = parsed
        triples.setdefault((subject.lower(), relation.lower()), obj)
    return triples


class MockReader:
    """Instruction-tuned-like oracle reader over a MockWorld.

    With `noise` 0 (the default) the reader is a pure function of the world
    and the prompt. A non-zero `noise` is the probability that an irrelevant
    context distracts the reader: where the rules would answer the marker on
    a with-context prompt, it instead answers the object of the first
    context fact. That knob exists to produce degraded behavior-preservation
    runs; it never fires on prompts the rules can ground.
    """

    def __init__(self, world: MockWorld, *, noise: float = 0.0, noise_seed: int = 0) -> None:
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")
        self.world = world
        self.noise = noise
        self.noise_seed = noise_seed
        self.reader_id = f"mock-{world.digest():016x}" + (f"-noise{noise}-{noise_seed}" if noise else "")

    def complete(self, request: ReaderRequest) -> str:
        try:
            parsed = mock_parse(request.prompt)
        except UnrecognizedPromptError:
            return QA_IRRELEVANCE_MARKER
        answer = self._answer(parsed)
        if (
            self.noise > 0.0
            and parsed.kind in (TemplateKind.MRC_WITH_CONTEXT, TemplateKind.FC_WITH_CONTEXT)
            and parsed.context_lines
            and answer in (QA_IRRELEVANCE_MARKER, FC_IRRELEVANCE_MARKER)
            and self._noise_fires(request.prompt)
        ):
            distracted = _parse_triple(parsed.context_lines[0])
            if distracted is not None:
                answer = distracted[2]
        return truncate_to_tokens(answer, request.max_tokens)

    def _noise_fires(self, prompt: str) -> bool:
        draw = fnv1a_64(f"{self.noise_seed}:{prompt}") / 2.0**64
        return draw < self.noise

    def _answer(self, parsed: ParsedPrompt) -> str:
        if parsed.kind is TemplateKind.MRC_WITH_CONTEXT:
            return self._answer_grounded_question(parsed.query, _context_triples(parsed.context_lines))
        if parsed.kind is TemplateKind.QA_NO_CONTEXT:
            return self._answer_parametric_question(parsed.query)
        if parsed.kind is TemplateKind.FC_WITH_CONTEXT:
            return self._answer_grounded_claim(parsed.query, _context_triples(parsed.context_lines))
        return self._answer_parametric_claim(parsed.query)

    def _answer_grounded_question(self, question: str, context: dict[tuple[str, str], str]) -> str:
        two_hop = _TWO_HOP_RE.match(question)
        if two_hop is not None:
            subject = two_hop.group("subject").strip().lower()
            first = context.get((subject, two_hop.group("r1").strip().lower()))
            if first is None:
                return QA_IRRELEVANCE_MARKER
            hop_key = (first.lower(), two_hop.group("r2").strip().lower())
            second = context.get(hop_key)
            if second is None:
                # Hop 1 was grounded, so parametric knowledge may finish the chain.
                second = self.world.lookup(first, two_hop.group("r2").strip())
            return second if second is not None else QA_IRRELEVANCE_MARKER
        single = _SINGLE_HOP_RE.match(question)
        if single is not None:
            obj = context.get((single.group("subject").strip().lower(), single.group("relation").strip().lower()))
            return obj if obj is not None else QA_IRRELEVANCE_MARKER
        boolean = _BOOLEAN_RE.match(question)
        if boolean is not None:
            verdict = self._claim_verdict(boolean.group("statement"), context)
            return verdict if verdict is not None else QA_IRRELEVANCE_MARKER
        return QA_IRRELEVANCE_MARKER

    def _answer_parametric_question(self, question: str) -> str:
        two_hop = _TWO_HOP_RE.match(question)
        if two_hop is not None:
            first = self.world.lookup(two_hop.group("subject").strip(), two_hop.group("r1").strip())
            if first is None:
                return UNKNOWN_ANSWER
            second = self.world.lookup(first, two_hop.group("r2").strip())
            return second if second is not None else UNKNOWN_ANSWER
        single = _SINGLE_HOP_RE.match(question)
        if single is not None:
            obj = self.world.lookup(single.group("subject").strip(), single.group("relation").strip())
            return obj if obj is not None else UNKNOWN_ANSWER
        boolean = _BOOLEAN_RE.match(question)
        if boolean is not None:
            parsed = _parse_triple(boolean.group("statement"))
            if parsed is None:
                return UNKNOWN_ANSWER
            subject, relation, obj = parsed
            known = self.world.lookup(subject, relation)
            if known is None:
                return UNKNOWN_ANSWER
            return "Yes" if known.lower() == obj.lower() else "No"
        return UNKNOWN_ANSWER

    def _answer_grounded_claim(self, hypothesis: str, context: dict[tuple[str, str], str]) -> str:
        verdict = self._claim_verdict(hypothesis, context)
        return verdict if verdict is not None else FC_IRRELEVANCE_MARKER

    def _answer_parametric_claim(self, hypothesis: str) -> str:
        parsed = _parse_triple(hypothesis)
        if parsed is None:
            return UNKNOWN_ANSWER
        subject, relation, obj = parsed
        known = self.world.lookup(subject, relation)
        if known is None:
            return UNKNOWN_ANSWER
        return "Yes" if known.lower() == obj.lower() else "No"

    @staticmethod
    def _claim_verdict(hypothesis: str, context: dict[tuple[str, str], str]) -> str | None:
        parsed = _parse_triple(hypothesis)
        if parsed is None:
            return None
        subject, relation, obj = parsed
        known = context.get((subject.lower(), relation.lower()))
        if known is None:
            return None
        return "Yes" if known.lower() == obj.lower() else "No"


class HttpReader:
    """Chat-completions client with bounded retries and concurrency.

    Sends {model, messages, temperature: 0, max_tokens} to
    `<base_url>/chat/completions` and reads the first choice's message
    content. Retries up to `max_retries` times on 429 and 5xx responses and
    on timeouts, with exponential backoff; other failures raise
    BackendError immediately. The bearer token is read from the
    READER_API_KEY environment variable.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_base: float = DEFAULT_BACKOFF,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.reader_id = f"http:{model}"
        self._api_key = api_key
        self._session = session or requests.Session()
        self._sleep = sleep
        self._slots = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self._api_key or os.environ.get(READER_API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ReaderRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": 0,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_status: int | None = None
        last_body = ""
        timed_out = False
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self._sleep(self.backoff_base * 2 ** (attempt - 1))
                try:
                    response = self._session.post(
                        url, json=payload, headers=self._headers(), timeout=self.timeout
                    )
                except requests.Timeout:
                    timed_out = True
                    continue
                except requests.RequestException as exc:
                    raise BackendError(None, str(exc)) from exc
                if response.status_code == 429 or response.status_code >= 500:
                    last_status, last_body = response.status_code, response.text
                    timed_out = False
                    continue
                if response.status_code < 200 or response.status_code >= 300:
                    raise BackendError(response.status_code, response.text)
                return self._extract_content(response, request.max_tokens)
        if timed_out:
            raise BackendTimeoutError(f"no response from {url} after {self.max_retries + 1} attempts")
        raise BackendError(last_status, last_body)

    @staticmethod
    def _extract_content(response: requests.Response, max_tokens: int) -> str:
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(response.status_code, response.text) from exc
        if not isinstance(content, str):
            raise BackendError(response.status_code, response.text)
        return truncate_to_tokens(content, max_tokens)
