"""Uniform access to generative language models in two capability tiers.

Generalities only live here: handles, decoding parameters, the objective
vocabulary used by the ablation engine, and the checked operations. Concrete
backends are the numpy models in tinylm.py, the scripted test double, and a
thin JSON-over-HTTP client for remote inference servers.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol, Sequence, Union, runtime_checkable

import numpy as np
import requests


class ModelKind(Enum):
    BASE = "base"
    INSTRUCT = "instruct"


class Capability(Enum):
    GENERATE_ONLY = "generate_only"
    TRAINABLE = "trainable"


class CapabilityError(RuntimeError):
    pass


class ContextOverflowError(RuntimeError):
    pass


class BackendUnavailableError(RuntimeError):
    """Transient backend failure; safe to retry."""


class NumericalDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    """Decoding parameters. temperature 0 means fully deterministic decoding
    for a fixed backend and seed."""

    max_new_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")


# ---------------------------------------------------------------------------
# Objective terms. The ablation engine composes its objective exclusively
# from these; trainable backends evaluate value and gradient for each kind.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossEntropyTerm:
    """Mean per-token cross-entropy over full text sequences (nats)."""

    texts: tuple[str, ...]


@dataclass(frozen=True)
class SplicedCrossEntropyTerm:
    """Cross-entropy on a continuation given a prompt, scored on the
    continuation tokens only."""

    pairs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class KLDivergenceTerm:
    """Mean per-token forward KL from a frozen reference backend to the
    current model, KL(reference || current)."""

    reference: "TrainableBackend"
    texts: tuple[str, ...]


ObjectiveTerm = Union[CrossEntropyTerm, SplicedCrossEntropyTerm, KLDivergenceTerm]
Objective = Sequence[tuple[float, ObjectiveTerm]]


@runtime_checkable
class GenerativeBackend(Protocol):
    def generate(self, system_prompt: str | None, prompt: str, params: GenerationParams) -> str: ...

    def count_tokens(self, text: str) -> int: ...


@runtime_checkable
class TrainableBackend(GenerativeBackend, Protocol):
    def term_value(self, term: ObjectiveTerm) -> float: ...

    def term_value_and_grad(self, term: ObjectiveTerm) -> tuple[float, np.ndarray]: ...

    def next_token_distributions(self, texts: Sequence[str]) -> list[np.ndarray]: ...

    def get_params(self) -> np.ndarray: ...

    def set_params(self, params: np.ndarray) -> None: ...

    def clone(self) -> "TrainableBackend": ...


@dataclass
class ModelHandle:
    model_id: str
    kind: ModelKind
    capability: Capability
    context_limit: int
    backend: GenerativeBackend

    def require_trainable(self) -> TrainableBackend:
        if self.capability is not Capability.TRAINABLE:
            raise CapabilityError(
                f"model {self.model_id} is generate-only and rejects training calls"
            )
        return self.backend  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def generate(
    handle: ModelHandle,
    system_prompt: str | None,
    prompt: str,
    params: GenerationParams = GenerationParams(),
) -> str:
    """Decode a continuation (base) or assistant reply (instruct). The prompt
    is never echoed back."""
    if system_prompt is not None and handle.kind is not ModelKind.INSTRUCT:
        raise CapabilityError(f"model {handle.model_id} is a base model and rejects a system prompt")
    total = handle.backend.count_tokens(prompt)
    if system_prompt:
        total += handle.backend.count_tokens(system_prompt)
    if total > handle.context_limit:
        raise ContextOverflowError(
            f"prompt of {total} tokens exceeds context limit {handle.context_limit}"
        )
    return handle.backend.generate(system_prompt, prompt, params)


def sequence_loss(handle: ModelHandle, text_batch: Sequence[str]) -> float:
    """Mean per-token cross-entropy of the batch in nats, weighted by token
    count (whole-batch loss equals the token-weighted mean of per-chunk losses)."""
    backend = handle.require_trainable()
    if not text_batch:
        raise ValueError("text batch must be non-empty")
    value = backend.term_value(CrossEntropyTerm(tuple(text_batch)))
    if not math.isfinite(value):
        raise NumericalDivergenceError("numerical divergence in sequence loss")
    return value


def spliced_sequence_loss(handle: ModelHandle, pairs: Sequence[tuple[str, str]]) -> float:
    """Cross-entropy of continuations given prompts, on continuation tokens only."""
    backend = handle.require_trainable()
    if not pairs:
        raise ValueError("pair batch must be non-empty")
    value = backend.term_value(SplicedCrossEntropyTerm(tuple(pairs)))
    if not math.isfinite(value):
        raise NumericalDivergenceError("numerical divergence in spliced loss")
    return value


def next_token_distributions(handle: ModelHandle, text_batch: Sequence[str]) -> list[np.ndarray]:
    """Per-position next-token probability vectors, one (T, V) array per text."""
    backend = handle.require_trainable()
    if not text_batch:
        raise ValueError("text batch must be non-empty")
    dists = backend.next_token_distributions(text_batch)
    for arr in dists:
        if not np.all(np.isfinite(arr)):
            raise NumericalDivergenceError("numerical divergence in distributions")
    return dists


def apply_gradient_step(handle: ModelHandle, objective: Objective, learning_rate: float) -> float:
    """One plain gradient-descent step on the composed objective.

    Returns the pre-step objective value. On non-finite value or gradient no
    update is applied.
    """
    backend = handle.require_trainable()
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    total_value = 0.0
    total_grad = np.zeros_like(backend.get_params())
    for weight, term in objective:
        value, grad = backend.term_value_and_grad(term)
        total_value += weight * value
        total_grad += weight * grad
    if not math.isfinite(total_value) or not np.all(np.isfinite(total_grad)):
        raise NumericalDivergenceError("non-finite gradient; step not applied")
    backend.set_params(backend.get_params() - learning_rate * total_grad)
    return total_value


# ---------------------------------------------------------------------------
# Scripted test double: a fixed prompt-to-response table, so the evaluation,
# probing, and annotation pipelines are testable with no model weights.
# ---------------------------------------------------------------------------

class ScriptedModel:
    def __init__(
        self,
        responses: dict[str, str] | None = None,
        default: str = "",
        responder: Callable[[str | None, str], str] | None = None,
    ) -> None:
        self.responses = dict(responses or {})
        self.default = default
        self.responder = responder

    def generate(self, system_prompt: str | None, prompt: str, params: GenerationParams) -> str:
        if self.responder is not None:
            return self.responder(system_prompt, prompt)
        return self.responses.get(prompt, self.default)

    def count_tokens(self, text: str) -> int:
        return len(text.split())


def scripted_handle(
    model_id: str,
    responses: dict[str, str] | None = None,
    default: str = "",
    responder: Callable[[str | None, str], str] | None = None,
    kind: ModelKind = ModelKind.BASE,
    context_limit: int = 8192,
) -> ModelHandle:
    return ModelHandle(
        model_id=model_id,
        kind=kind,
        capability=Capability.GENERATE_ONLY,
        context_limit=context_limit,
        backend=ScriptedModel(responses, default, responder),
    )


# ---------------------------------------------------------------------------
# Remote backend: JSON-over-HTTP chat/completions as exposed by common
# inference servers. Auth token comes from an environment variable.
# ---------------------------------------------------------------------------

class RemoteModel:
    def __init__(
        self,
        base_url: str,
        model: str,
        kind: ModelKind,
        auth_env: str = "",
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.kind = kind
        self.auth_env = auth_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env, "") if self.auth_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def generate(self, system_prompt: str | None, prompt: str, params: GenerationParams) -> str:
        if self.kind is ModelKind.INSTRUCT:
            messages = []
            if system_prompt:
                messages.append({"role": "system", "content": system_prompt})
            messages.append({"role": "user", "content": prompt})
            payload = {
                "model": self.model,
                "messages": messages,
                "max_tokens": params.max_new_tokens,
                "temperature": params.temperature,
                "seed": params.seed,
            }
            url = f"{self.base_url}/v1/chat/completions"
        else:
            payload = {
                "model": self.model,
                "prompt": prompt,
                "max_tokens": params.max_new_tokens,
                "temperature": params.temperature,
                "seed": params.seed,
                "echo": False,
            }
            url = f"{self.base_url}/v1/completions"
        try:
            resp = self.session.post(url, json=payload, headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendUnavailableError(f"backend unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendUnavailableError(f"backend error HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise RuntimeError(f"backend rejected request: HTTP {resp.status_code} {resp.text[:200]}")
        body = resp.json()
        choice = body["choices"][0]
        if self.kind is ModelKind.INSTRUCT:
            return choice["message"]["content"]
        return choice["text"]

    def count_tokens(self, text: str) -> int:
        # Rough upper bound; remote tokenizers are not available locally.
        return max(len(text.split()), len(text) // 3)


def remote_handle(
    model_id: str,
    base_url: str,
    model: str,
    kind: ModelKind,
    auth_env: str = "",
    context_limit: int = 8192,
    session: requests.Session | None = None,
) -> ModelHandle:
    return ModelHandle(
        model_id=model_id,
        kind=kind,
        capability=Capability.GENERATE_ONLY,
        context_limit=context_limit,
        backend=RemoteModel(base_url, model, kind, auth_env=auth_env, session=session),
    )
