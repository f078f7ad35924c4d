"""Text-generation backends: an OpenAI-style HTTP completions client and a
deterministic mock world for desk-scale verification.

The mock world emulates a prompt-following language model over a closed
sentiment vocabulary. Every generated text draws its adjectives from exactly
one polarity lexicon, so a trivial lexicon counter recovers the ground-truth
polarity of any mock text. ``noise_rate`` controls how often the generated
polarity contradicts the prompt; in-context demonstrations shift that rate up
or down depending on whether they demonstrate consistent labeling, which is
what lets feedback loops be studied end to end with a known ground truth.
"""

from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import random

import requests

from .data import Example
from .errors import BackendError, ConfigError, EmptyCompletionError
from .prompts import SEGMENT_SEPARATOR


@dataclass(frozen=True)
class SamplingConfig:
    top_p: float = 0.9
    temperature: float = 1.0
    max_tokens: int = 64
    stop: str = '"'

    def validate(self) -> None:
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must lie in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")


# --- mock world ---------------------------------------------------------------

_POSITIVE = (
    "wonderful", "brilliant", "delightful", "superb", "charming", "gripping",
    "inventive", "heartfelt", "dazzling", "masterful", "witty", "elegant",
    "thrilling", "luminous", "captivating", "refreshing", "poignant",
    "stunning", "inspired", "joyous", "vivid", "graceful", "rousing", "sublime",
)
_NEGATIVE = (
    "dreadful", "tedious", "clumsy", "lifeless", "grating", "hollow",
    "bloated", "incoherent", "stale", "dismal", "plodding", "shrill",
    "vapid", "murky", "leaden", "aimless", "tiresome", "disjointed",
    "sour", "forgettable", "lurid", "sloppy", "drab", "wooden",
)
_SUBJECTS = (
    "the plot", "the acting", "the pacing", "the dialogue", "the script",
    "the soundtrack", "the direction", "the ending", "the camera work",
    "the premise", "the cast", "the editing", "the atmosphere", "the humor",
    "the story", "the visuals",
)
_VERBS = ("was", "felt", "seemed", "stayed", "looked")
_DEGREES = ("truly", "really", "quite", "utterly", "somewhat", "thoroughly", "surprisingly")
_CLOSERS = (
    "from start to finish", "in every scene", "throughout", "by the final act",
    "at every turn", "on the whole", "despite the hype", "beyond belief",
)

_WORD_RE = re.compile(r"[a-z']+")


@dataclass(frozen=True)
class MockWorld:
    """Closed vocabulary with two disjoint polarity lexicons (class 1 is the
    positive polarity) and a word->class map for label words in prompts."""

    positive_words: tuple[str, ...] = _POSITIVE
    negative_words: tuple[str, ...] = _NEGATIVE
    subjects: tuple[str, ...] = _SUBJECTS
    verbs: tuple[str, ...] = _VERBS
    degrees: tuple[str, ...] = _DEGREES
    closers: tuple[str, ...] = _CLOSERS
    label_word_classes: tuple[tuple[str, int], ...] = (("negative", 0), ("positive", 1))

    num_classes: int = 2

    def validate(self) -> None:
        if set(self.positive_words) & set(self.negative_words):
            raise ConfigError("polarity lexicons must be disjoint")
        label_words = {w for w, _ in self.label_word_classes}
        lexicon = set(self.positive_words) | set(self.negative_words)
        if label_words & lexicon:
            raise ConfigError("label words must not appear in the polarity lexicons")

    def truth_label(self, text: str) -> int:
        """Exact ground-truth polarity: which lexicon the text draws from."""
        tokens = _WORD_RE.findall(text.lower())
        pos = sum(tok in self.positive_words for tok in tokens)
        neg = sum(tok in self.negative_words for tok in tokens)
        return 1 if pos > neg else 0

    def find_label_word(self, segment: str) -> int | None:
        tokens = set(_WORD_RE.findall(segment.lower()))
        for word, cls in self.label_word_classes:
            if word.lower() in tokens:
                return cls
        return None

    def _adjective(self, rng: random.Random, polarity: int) -> str:
        # Zipf-ish weighting keeps a long tail of rare adjectives, so the task
        # model stays data-limited and label noise has a measurable cost.
        lexicon = self.positive_words if polarity == 1 else self.negative_words
        weights = [1.0 / (rank + 2.0) for rank in range(len(lexicon))]
        return rng.choices(lexicon, weights=weights, k=1)[0]

    def make_text(self, rng: random.Random, polarity: int) -> str:
        subj1, subj2 = rng.sample(self.subjects, 2)
        adj = lambda: self._adjective(rng, polarity)  # noqa: E731
        skeleton = rng.randrange(4)
        if skeleton == 0:
            return (
                f"{subj1} {rng.choice(self.verbs)} {rng.choice(self.degrees)} {adj()} "
                f"and {adj()} {rng.choice(self.closers)}"
            )
        if skeleton == 1:
            return (
                f"{subj1} {rng.choice(self.verbs)} {adj()}, and {subj2} "
                f"{rng.choice(self.verbs)} {rng.choice(self.degrees)} {adj()}"
            )
        if skeleton == 2:
            return f"{rng.choice(self.degrees)} {adj()}, with {subj1} {adj()} {rng.choice(self.closers)}"
        return f"{subj1} and {subj2} {rng.choice(self.verbs)} {adj()} {rng.choice(self.closers)}"

    def make_neutral_text(self, rng: random.Random) -> str:
        return f"{rng.choice(self.subjects)} {rng.choice(self.closers)}".replace("the ", "", 1)

    def make_dataset(
        self,
        n: int,
        noise_rate: float,
        seed: int,
        id_start: int = 0,
        iteration: int = 0,
    ) -> list[Example]:
        """Balanced labeled set; each text's polarity contradicts its label
        with probability ``noise_rate``."""
        rng = random.Random(f"world:{seed}")
        out = []
        for i in range(n):
            label = i % self.num_classes
            polarity = 1 - label if rng.random() < noise_rate else label
            out.append(
                Example(
                    id=id_start + i,
                    text=self.make_text(rng, polarity),
                    label=label,
                    iteration=iteration,
                )
            )
        return out


def default_mock_world() -> MockWorld:
    world = MockWorld()
    world.validate()
    return world


@dataclass(frozen=True)
class MockConfig:
    seed: int = 0
    noise_rate: float = 0.0
    world: MockWorld = field(default_factory=default_mock_world)

    def validate(self) -> None:
        if not 0 <= self.noise_rate <= 1:
            raise ConfigError("noise_rate must lie in [0, 1]")
        self.world.validate()


_TRAILING_QUOTED = re.compile(r'"([^"]*)"\s*$')


class MockBackend:
    """Pure function of (seed, request counter, prompt, noise_rate).

    The effective chance of contradicting the prompt is
    ``noise_rate * (1 + 2*misleading) / (1 + k)`` for k demonstrations of
    which ``misleading`` teach an inconsistent pairing: a labeled
    demonstration whose text polarity disagrees with its stated label, or an
    unlabeled one whose polarity disagrees with the inferred target. Correct
    demonstrations therefore suppress noise and mislabeled ones amplify it.
    """

    kind = "mock"

    def __init__(self, config: MockConfig):
        config.validate()
        self.config = config
        self.world = config.world
        self.counter = 0

    # -- prompt interpretation --

    def _parse(self, prompt: str) -> tuple[int | None, list[tuple[int | None, str]]]:
        segments = [s for s in prompt.split(SEGMENT_SEPARATOR) if s.strip()]
        if not segments:
            return None, []
        demos = []
        for seg in segments[:-1]:
            match = _TRAILING_QUOTED.search(seg)
            if not match:
                continue
            text = match.group(1)
            stated = self.world.find_label_word(seg[: match.start()])
            demos.append((stated, text))
        target = self.world.find_label_word(segments[-1])
        return target, demos

    def _effective_noise(self, target: int, demos: list[tuple[int | None, str]]) -> float:
        misleading = 0
        for stated, text in demos:
            implied = stated if stated is not None else target
            if self.world.truth_label(text) != implied:
                misleading += 1
        rate = self.config.noise_rate * (1 + 2 * misleading) / (1 + len(demos))
        return min(1.0, rate)

    def complete(self, prompt: str, sampling: SamplingConfig) -> str:
        sampling.validate()
        rng = random.Random(f"{self.config.seed}:{self.counter}")
        self.counter += 1
        target, demos = self._parse(prompt)
        if target is None and demos:
            # Label-free prompt (F5): steer toward the demonstrations' majority polarity.
            votes = [self.world.truth_label(text) for _, text in demos]
            target = 1 if sum(votes) * 2 > len(votes) else 0
        if target is None:
            text = self.world.make_neutral_text(rng)
        else:
            polarity = target
            if rng.random() < self._effective_noise(target, demos):
                polarity = 1 - target
            text = self.world.make_text(rng, polarity)
        words = text.split()
        if len(words) > sampling.max_tokens:
            text = " ".join(words[: sampling.max_tokens])
        return text.split(sampling.stop)[0].strip() if sampling.stop else text.strip()

    def complete_batch(self, prompts: Sequence[str], sampling: SamplingConfig) -> list[str]:
        # Strictly sequential: the counter defines the random stream.
        return [self.complete(p, sampling) for p in prompts]


@dataclass(frozen=True)
class HttpConfig:
    base_url: str = "http://localhost:8000"
    model_name: str = "gpt2-xl"
    auth_env_var: str | None = None
    timeout: float = 60.0
    max_inflight: int = 4
    max_retries: int = 4
    backoff_base: float = 0.5

    def validate(self) -> None:
        if not self.base_url:
            raise ConfigError("base_url must be set")
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.max_retries < 0 or self.backoff_base < 0:
            raise ConfigError("max_retries and backoff_base must be >= 0")


class HttpBackend:
    """Client for a POST {base_url}/v1/completions service.

    5xx responses and timeouts are retried with exponential backoff up to the
    configured cap; 4xx responses fail immediately. Request bodies use
    canonical JSON so identical inputs serialize to identical bytes.
    """

    kind = "http"

    def __init__(self, config: HttpConfig):
        config.validate()
        self.config = config

    def build_request(self, prompt: str, sampling: SamplingConfig) -> tuple[str, dict, bytes]:
        sampling.validate()
        url = self.config.base_url.rstrip("/") + "/v1/completions"
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var)
            if not token:
                raise BackendError(
                    f"auth env var {self.config.auth_env_var} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model_name,
            "prompt": prompt,
            "max_tokens": sampling.max_tokens,
            "top_p": sampling.top_p,
            "temperature": sampling.temperature,
            "stop": sampling.stop,
        }
        payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return url, headers, payload

    def _send(self, url: str, headers: dict, payload: bytes) -> tuple[int, str]:
        response = requests.post(
            url, data=payload, headers=headers, timeout=self.config.timeout
        )
        return response.status_code, response.text

    def complete(self, prompt: str, sampling: SamplingConfig) -> str:
        url, headers, payload = self.build_request(prompt, sampling)
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                status, text = self._send(url, headers, payload)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = f"transport error: {exc}"
                continue
            if status >= 500:
                last_error = f"server error {status}"
                continue
            if status != 200:
                raise BackendError(f"completion request failed with status {status}")
            return _extract_completion(text, sampling)
        raise BackendError(
            f"completion request failed after {self.config.max_retries + 1} attempts "
            f"({last_error})"
        )

    def complete_batch(self, prompts: Sequence[str], sampling: SamplingConfig) -> list[str]:
        # Fan out up to max_inflight requests; results come back in request order.
        if len(prompts) <= 1 or self.config.max_inflight == 1:
            return [self.complete(p, sampling) for p in prompts]
        with ThreadPoolExecutor(max_workers=self.config.max_inflight) as pool:
            return list(pool.map(lambda p: self.complete(p, sampling), prompts))


def _extract_completion(response_text: str, sampling: SamplingConfig) -> str:
    try:
        doc = json.loads(response_text)
        text = doc["choices"][0]["text"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed completion response: {exc}") from exc
    if sampling.stop:
        text = text.split(sampling.stop)[0]
    text = " ".join(text.split())
    if not text:
        raise EmptyCompletionError("backend returned an empty completion")
    return text


GeneratorBackend = MockBackend | HttpBackend


@dataclass(frozen=True)
class BackendSpec:
    """Discriminated union: exactly one of the backend configs is populated."""

    kind: str = "mock"
    mock: MockConfig | None = field(default_factory=MockConfig)
    http: HttpConfig | None = None

    def validate(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        populated = [name for name in ("mock", "http") if getattr(self, name) is not None]
        if populated != [self.kind]:
            raise ConfigError(
                f"backend kind {self.kind!r} requires exactly its own config, got {populated}"
            )
        getattr(self, self.kind).validate()


def build_backend(spec: BackendSpec) -> GeneratorBackend:
    spec.validate()
    if spec.kind == "mock":
        return MockBackend(spec.mock)
    return HttpBackend(spec.http)


def generate(backend: GeneratorBackend, prompt: str, sampling: SamplingConfig) -> str:
    """One completion for one prompt (see the backend classes for semantics)."""
    return backend.complete(prompt, sampling)


def generate_batch(
    backend: GeneratorBackend, prompts: Sequence[str], sampling: SamplingConfig
) -> list[str]:
    return backend.complete_batch(prompts, sampling)


# --- degenerate-copy filter ----------------------------------------------------

_OVERLAP_NGRAM = 8
_OVERLAP_JACCARD = 0.5


def _word_ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def overlap_filter(candidate: str, in_context_texts: Sequence[str]) -> bool:
    """True if the candidate should be kept.

    Rejects texts that copy a demonstration: any shared word-level 8-gram, or
    word-set Jaccard similarity of at least 0.5 with any demonstration.
    """
    cand_tokens = candidate.lower().split()
    cand_grams = _word_ngrams(cand_tokens, _OVERLAP_NGRAM)
    cand_words = set(cand_tokens)
    for text in in_context_texts:
        ref_tokens = text.lower().split()
        if cand_grams and cand_grams & _word_ngrams(ref_tokens, _OVERLAP_NGRAM):
            return False
        ref_words = set(ref_tokens)
        union = cand_words | ref_words
        if union and len(cand_words & ref_words) / len(union) >= _OVERLAP_JACCARD:
            return False
    return True
