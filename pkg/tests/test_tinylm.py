from __future__ import annotations

import numpy as np
import pytest

from provaudit.models import CrossEntropyTerm, KLDivergenceTerm, SplicedCrossEntropyTerm
from provaudit.tinylm import ScalarToyModel, TinyEmbeddingLM, build_vocab, load_model, save_model

TEXTS = (
    "the benefit is paid every month to the claimant",
    "the claimant must report a change to the office",
)


def central_difference(model, term, index: int, eps: float = 1e-6) -> float:
    params = model.get_params()
    plus = params.copy()
    plus[index] += eps
    model.set_params(plus)
    up = model.term_value(term)
    minus = params.copy()
    minus[index] -= eps
    model.set_params(minus)
    down = model.term_value(term)
    model.set_params(params)
    return (up - down) / (2 * eps)


def toy_terms(theta_ref: float = -0.5):
    reference = ScalarToyModel(theta_ref)
    return {
        "forget": CrossEntropyTerm(("1 0 1 1 0", "0 0 1")),
        "mismatch": SplicedCrossEntropyTerm((("1 0", "0 1 1"), ("0", "1 0"))),
        "preserve": KLDivergenceTerm(reference, ("1 0 0 1", "0 1")),
    }


@pytest.mark.parametrize("term_name", ["forget", "mismatch", "preserve"])
def test_scalar_toy_gradients_match_finite_differences(term_name: str) -> None:
    model = ScalarToyModel(theta=0.7)
    term = toy_terms()[term_name]
    value, grad = model.term_value_and_grad(term)
    fd = central_difference(model, term, 0)
    assert np.isfinite(value)
    assert grad[0] == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("term_name", ["forget", "mismatch", "preserve"])
def test_embedding_lm_gradients_match_finite_differences(term_name: str) -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=6, gain=3.0)
    terms = {
        "forget": CrossEntropyTerm(TEXTS),
        "mismatch": SplicedCrossEntropyTerm(
            (("the benefit is", "report a change"), ("the claimant", "paid every month"))
        ),
        "preserve": KLDivergenceTerm(
            TinyEmbeddingLM(model.vocab, model.ctx_emb * 1.01, model.out_emb.copy()), TEXTS
        ),
    }
    term = terms[term_name]
    _, grad = model.term_value_and_grad(term)
    rng = np.random.default_rng(3)
    nonzero = np.flatnonzero(np.abs(grad) > 1e-8)
    picks = rng.choice(nonzero, size=min(12, len(nonzero)), replace=False)
    for index in picks:
        fd = central_difference(model, term, int(index))
        assert grad[index] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_kl_zero_against_clone() -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=6, gain=3.0)
    value, grad = model.term_value_and_grad(KLDivergenceTerm(model.clone(), TEXTS))
    assert value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_kl_nonnegative_for_perturbed_model() -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=6, gain=3.0)
    reference = model.clone()
    rng = np.random.default_rng(0)
    model.set_params(model.get_params() + 0.05 * rng.standard_normal(model.get_params().size))
    value = model.term_value(KLDivergenceTerm(reference, TEXTS))
    assert value > 0


def test_vocab_is_sorted_with_unk_first() -> None:
    vocab = build_vocab(["b a", "c a"])
    assert vocab[0] == "<unk>"
    assert list(vocab[1:]) == sorted(vocab[1:])


def test_unknown_tokens_map_to_unk() -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=4, gain=2.0)
    ids = model.encode("zzz-not-in-vocab the")
    assert ids[0] == 0


def test_fit_corpus_approximates_bigram_distributions() -> None:
    # a corpus with a fully deterministic bigram structure is memorized
    text = "a b c d e " * 40
    model = TinyEmbeddingLM.fit_corpus([text.strip()], dim=8, gain=1.0)
    loss = model.term_value(CrossEntropyTerm((text.strip(),)))
    assert loss < 0.1


def test_clone_is_independent() -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=4, gain=2.0)
    twin = model.clone()
    model.set_params(model.get_params() + 1.0)
    assert not np.allclose(model.get_params(), twin.get_params())


def test_save_load_round_trip(tmp_path) -> None:
    model = TinyEmbeddingLM.fit_corpus(TEXTS, dim=4, gain=2.0)
    save_model(model, tmp_path / "ckpt")
    loaded = load_model(tmp_path / "ckpt")
    assert isinstance(loaded, TinyEmbeddingLM)
    assert loaded.vocab == model.vocab
    np.testing.assert_array_equal(loaded.get_params(), model.get_params())

    toy = ScalarToyModel(theta=1.25)
    save_model(toy, tmp_path / "toy")
    loaded_toy = load_model(tmp_path / "toy")
    assert isinstance(loaded_toy, ScalarToyModel)
    assert loaded_toy.theta == 1.25


def test_gain_rescale_preserves_distributions() -> None:
    low = TinyEmbeddingLM.fit_corpus(TEXTS, dim=6, gain=1.0)
    high = TinyEmbeddingLM.fit_corpus(TEXTS, dim=6, gain=50.0)
    for a, b in zip(low.next_token_distributions(TEXTS), high.next_token_distributions(TEXTS)):
        np.testing.assert_allclose(a, b, atol=1e-9)
