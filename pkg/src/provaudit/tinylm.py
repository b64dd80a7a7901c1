"""Small numpy language models with exact loss-and-gradient evaluation.

TinyEmbeddingLM is a factored bigram model: the next-token logits for a
context token are the product of a context embedding and the output embedding
table. It is initialized from the smoothed bigram statistics of a corpus via
an SVD of the log-probability table, so a freshly built model already "knows"
its corpus. The `gain` knob rescales the two factors against each other
(their product, and hence the distribution, is unchanged) which sets how far
a fixed-size gradient step moves the model; the fixture manifest records the
calibrated value.

ScalarToyModel is a one-parameter model over a two-token vocabulary, used to
check analytic gradients against central finite differences.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .models import (
    Capability,
    CrossEntropyTerm,
    GenerationParams,
    KLDivergenceTerm,
    ModelHandle,
    ModelKind,
    ObjectiveTerm,
    SplicedCrossEntropyTerm,
)

UNK = "<unk>"


def build_vocab(texts: Iterable[str]) -> tuple[str, ...]:
    tokens = set()
    for text in texts:
        tokens.update(text.split())
    tokens.discard(UNK)
    return (UNK, *sorted(tokens))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class TinyEmbeddingLM:
    def __init__(self, vocab: tuple[str, ...], ctx_emb: np.ndarray, out_emb: np.ndarray) -> None:
        if ctx_emb.shape[0] != len(vocab) + 1 or out_emb.shape[0] != len(vocab):
            raise ValueError("embedding shapes do not match vocabulary")
        if ctx_emb.shape[1] != out_emb.shape[1]:
            raise ValueError("context and output embeddings must share a dimension")
        self.vocab = tuple(vocab)
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        self.ctx_emb = np.asarray(ctx_emb, dtype=np.float64)
        self.out_emb = np.asarray(out_emb, dtype=np.float64)

    # -- construction ----------------------------------------------------

    @classmethod
    def fit_corpus(
        cls,
        texts: Sequence[str],
        dim: int = 48,
        gain: float = 8.0,
        smoothing: float = 0.1,
    ) -> "TinyEmbeddingLM":
        """Build a model whose distributions approximate the smoothed bigram
        MLE of `texts`, factored at rank `dim`."""
        vocab = build_vocab(texts)
        V = len(vocab)
        bos = V
        token_to_id = {tok: i for i, tok in enumerate(vocab)}
        counts = np.full((V + 1, V), smoothing, dtype=np.float64)
        for text in texts:
            ids = [token_to_id.get(tok, 0) for tok in text.split()]
            ctx = bos
            for t in ids:
                counts[ctx, t] += 1.0
                ctx = t
        logp = np.log(counts / counts.sum(axis=1, keepdims=True))
        logp -= logp.mean(axis=1, keepdims=True)  # per-row shift is softmax-invariant
        u, s, vt = np.linalg.svd(logp, full_matrices=False)
        k = min(dim, len(s))
        ctx_emb = (u[:, :k] * np.sqrt(s[:k])) / gain
        out_emb = (vt[:k, :].T * np.sqrt(s[:k])) * gain
        return cls(vocab, ctx_emb, out_emb)

    # -- encoding ----------------------------------------------------------

    @property
    def bos_id(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        ids = [self.token_to_id.get(tok, 0) for tok in text.split()]
        if not ids:
            raise ValueError("cannot encode empty text")
        return ids

    def count_tokens(self, text: str) -> int:
        return len(text.split())

    def _full_sequence(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        ids = self.encode(text)
        ctx = np.array([self.bos_id] + ids[:-1], dtype=np.intp)
        return ctx, np.array(ids, dtype=np.intp)

    def _spliced_sequence(self, prompt: str, continuation: str) -> tuple[np.ndarray, np.ndarray]:
        cont = self.encode(continuation)
        prompt_ids = [self.token_to_id.get(tok, 0) for tok in prompt.split()]
        first_ctx = prompt_ids[-1] if prompt_ids else self.bos_id
        ctx = np.array([first_ctx] + cont[:-1], dtype=np.intp)
        return ctx, np.array(cont, dtype=np.intp)

    def _logits(self, ctx: np.ndarray) -> np.ndarray:
        return self.ctx_emb[ctx] @ self.out_emb.T

    # -- losses and gradients ---------------------------------------------

    def _term_sequences(self, term: ObjectiveTerm) -> list[tuple[np.ndarray, np.ndarray]]:
        if isinstance(term, CrossEntropyTerm):
            if not term.texts:
                raise ValueError("cross-entropy term has no texts")
            return [self._full_sequence(t) for t in term.texts]
        if isinstance(term, SplicedCrossEntropyTerm):
            if not term.pairs:
                raise ValueError("spliced term has no pairs")
            return [self._spliced_sequence(p, c) for p, c in term.pairs]
        if isinstance(term, KLDivergenceTerm):
            if not term.texts:
                raise ValueError("KL term has no texts")
            return [self._full_sequence(t) for t in term.texts]
        raise TypeError(f"unsupported objective term {type(term).__name__}")

    def term_value(self, term: ObjectiveTerm) -> float:
        return self._term_eval(term, with_grad=False)[0]

    def term_value_and_grad(self, term: ObjectiveTerm) -> tuple[float, np.ndarray]:
        return self._term_eval(term, with_grad=True)

    def _term_eval(self, term: ObjectiveTerm, with_grad: bool) -> tuple[float, np.ndarray]:
        seqs = self._term_sequences(term)
        n_tokens = sum(len(tgt) for _, tgt in seqs)
        d_ctx = np.zeros_like(self.ctx_emb) if with_grad else None
        d_out = np.zeros_like(self.out_emb) if with_grad else None
        total = 0.0

        if isinstance(term, KLDivergenceTerm):
            ref = term.reference
            if not isinstance(ref, TinyEmbeddingLM) or ref.vocab != self.vocab:
                raise ValueError("KL reference must share the model vocabulary")

        for ctx, tgt in seqs:
            hidden = self.ctx_emb[ctx]
            logits = hidden @ self.out_emb.T
            logq = _log_softmax(logits)
            if isinstance(term, KLDivergenceTerm):
                ref_logits = term.reference._logits(ctx)
                logp = _log_softmax(ref_logits)
                p = np.exp(logp)
                total += float((p * (logp - logq)).sum())
                dlogits = (np.exp(logq) - p) / n_tokens
            else:
                rows = np.arange(len(tgt))
                total += float(-logq[rows, tgt].sum())
                dlogits = np.exp(logq)
                dlogits[rows, tgt] -= 1.0
                dlogits /= n_tokens
            if with_grad:
                d_out += dlogits.T @ hidden
                np.add.at(d_ctx, ctx, dlogits @ self.out_emb)

        value = total / n_tokens
        if not with_grad:
            return value, np.empty(0)
        return value, np.concatenate([d_ctx.ravel(), d_out.ravel()])

    def next_token_distributions(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            ctx, _ = self._full_sequence(text)
            out.append(np.exp(_log_softmax(self._logits(ctx))))
        return out

    # -- generation ---------------------------------------------------------

    def generate(self, system_prompt: str | None, prompt: str, params: GenerationParams) -> str:
        del system_prompt  # base model; the handle rejects one upstream
        # seed from the most recent in-vocabulary prompt token; an unknown
        # final word would otherwise collapse every prompt to one context
        ctx = self.bos_id
        for tok in reversed(prompt.split()):
            known = self.token_to_id.get(tok)
            if known is not None:
                ctx = known
                break
        rng = np.random.default_rng(params.seed)
        out: list[str] = []
        for _ in range(params.max_new_tokens):
            logits = self.ctx_emb[ctx] @ self.out_emb.T
            if params.temperature == 0:
                nxt = int(np.argmax(logits))
            else:
                probs = np.exp(_log_softmax(logits / params.temperature))
                nxt = int(rng.choice(len(self.vocab), p=probs))
            out.append(self.vocab[nxt])
            ctx = nxt
        return " ".join(out)

    # -- parameters ----------------------------------------------------------

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.ctx_emb.ravel(), self.out_emb.ravel()])

    def set_params(self, params: np.ndarray) -> None:
        n_ctx = self.ctx_emb.size
        if params.size != n_ctx + self.out_emb.size:
            raise ValueError("parameter vector has the wrong size")
        self.ctx_emb = params[:n_ctx].reshape(self.ctx_emb.shape).copy()
        self.out_emb = params[n_ctx:].reshape(self.out_emb.shape).copy()

    def clone(self) -> "TinyEmbeddingLM":
        return TinyEmbeddingLM(self.vocab, self.ctx_emb.copy(), self.out_emb.copy())


class ScalarToyModel:
    """One scalar parameter; next-token distribution softmax([0, theta]) over
    the vocabulary ("0", "1") at every position. Exists so objective gradients
    can be checked against finite differences by hand."""

    vocab = ("0", "1")

    def __init__(self, theta: float = 0.0) -> None:
        self.theta = float(theta)

    def encode(self, text: str) -> list[int]:
        toks = text.split()
        if not toks:
            raise ValueError("cannot encode empty text")
        return [1 if tok == "1" else 0 for tok in toks]

    def count_tokens(self, text: str) -> int:
        return len(text.split())

    def _dist(self) -> np.ndarray:
        logits = np.array([0.0, self.theta])
        return np.exp(_log_softmax(logits))

    def term_value(self, term: ObjectiveTerm) -> float:
        return self.term_value_and_grad(term)[0]

    def term_value_and_grad(self, term: ObjectiveTerm) -> tuple[float, np.ndarray]:
        if isinstance(term, CrossEntropyTerm):
            targets = [self.encode(t) for t in term.texts]
        elif isinstance(term, SplicedCrossEntropyTerm):
            targets = [self.encode(c) for _, c in term.pairs]
        elif isinstance(term, KLDivergenceTerm):
            ref = term.reference
            if not isinstance(ref, ScalarToyModel):
                raise ValueError("KL reference must be a ScalarToyModel")
            for t in term.texts:
                self.encode(t)  # reject empty texts
            # The distribution is position-independent, so the per-token mean
            # KL equals the single-position KL.
            p = ref._dist()
            q = self._dist()
            value = float((p * (np.log(p) - np.log(q))).sum())
            return value, np.array([q[1] - p[1]])
        else:
            raise TypeError(f"unsupported objective term {type(term).__name__}")

        n = sum(len(t) for t in targets)
        q = self._dist()
        logq = np.log(q)
        total = 0.0
        dtheta = 0.0
        for ids in targets:
            for t in ids:
                total += -logq[t]
                dtheta += (q[1] - (1.0 if t == 1 else 0.0)) / n
        return total / n, np.array([dtheta])

    def next_token_distributions(self, texts: Sequence[str]) -> list[np.ndarray]:
        q = self._dist()
        return [np.tile(q, (len(self.encode(t)), 1)) for t in texts]

    def generate(self, system_prompt: str | None, prompt: str, params: GenerationParams) -> str:
        del system_prompt, prompt
        rng = np.random.default_rng(params.seed)
        q = self._dist()
        out = []
        for _ in range(params.max_new_tokens):
            if params.temperature == 0:
                out.append(self.vocab[int(np.argmax([0.0, self.theta]))])
            else:
                out.append(self.vocab[int(rng.choice(2, p=q))])
        return " ".join(out)

    def get_params(self) -> np.ndarray:
        return np.array([self.theta])

    def set_params(self, params: np.ndarray) -> None:
        self.theta = float(params[0])

    def clone(self) -> "ScalarToyModel":
        return ScalarToyModel(self.theta)


# ---------------------------------------------------------------------------
# Handles and checkpoints
# ---------------------------------------------------------------------------

def trainable_handle(
    backend: TinyEmbeddingLM | ScalarToyModel,
    model_id: str,
    context_limit: int = 1_000_000,
) -> ModelHandle:
    return ModelHandle(
        model_id=model_id,
        kind=ModelKind.BASE,
        capability=Capability.TRAINABLE,
        context_limit=context_limit,
        backend=backend,
    )


def save_model(backend: TinyEmbeddingLM | ScalarToyModel, dirpath: Path | str) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    if isinstance(backend, TinyEmbeddingLM):
        meta = {"type": "tiny_embedding_lm", "vocab": list(backend.vocab)}
        np.savez(dirpath / "model.npz", ctx_emb=backend.ctx_emb, out_emb=backend.out_emb)
    elif isinstance(backend, ScalarToyModel):
        meta = {"type": "scalar_toy"}
        np.savez(dirpath / "model.npz", theta=np.array([backend.theta]))
    else:
        raise TypeError(f"cannot save backend of type {type(backend).__name__}")
    (dirpath / "meta.json").write_text(json.dumps(meta), encoding="utf-8")


def load_model(dirpath: Path | str) -> TinyEmbeddingLM | ScalarToyModel:
    dirpath = Path(dirpath)
    meta = json.loads((dirpath / "meta.json").read_text(encoding="utf-8"))
    arrays = np.load(dirpath / "model.npz")
    if meta["type"] == "tiny_embedding_lm":
        return TinyEmbeddingLM(tuple(meta["vocab"]), arrays["ctx_emb"], arrays["out_emb"])
    if meta["type"] == "scalar_toy":
        return ScalarToyModel(float(arrays["theta"][0]))
    raise ValueError(f"unknown model type {meta['type']!r}")
