"""Tokenizer, n-gram, and planted-rule oracle contracts.

The n-gram expectations below are hand-computed from the Laplace formula
p(w|ctx) = (count+1)/(total+V) with the end symbol in the vocabulary.
"""

import math

import pytest
from hypothesis import given, strategies as st

from promptsearch.datasets import (
    KeywordRule,
    RenderTemplate,
    generate_math_dataset,
    make_math_example,
    render,
)
from promptsearch.errors import CapabilityError, ConfigError, OracleError
from promptsearch.oracles import NgramOracle
from promptsearch.oracles.base import (
    GenerationParams,
    TokenLogits,
    conditional_span_scores,
    span_loss,
)
from promptsearch.oracles.planted import PlantedRuleOracle, oracle_for_task
from promptsearch.oracles import tokens as tok

# ---------------------------------------------------------------------------
# whitespace tokenizer
# ---------------------------------------------------------------------------

text_strategy = st.text(
    alphabet=st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=80
)


@given(text_strategy)
def test_tokenize_partitions_text(text):
    assert "".join(tok.tokenize(text)) == text


def test_token_shapes():
    assert tok.tokenize("a  bc d") == ["a", "  bc", " d"]
    assert tok.tokenize("  a ") == ["  a", " "]
    assert tok.tokenize("") == []
    assert tok.word("  bc") == "bc"
    assert tok.surface("x", "") == "x"
    assert tok.surface("x", "ab") == " x"
    assert tok.surface("x", "ab ") == "x"


# ---------------------------------------------------------------------------
# n-gram oracle
# ---------------------------------------------------------------------------


def test_bigram_hand_value_single_line():
    # "a b a b": count(a->b)=2, total(a)=2, V={a,b,</s>}=3 -> (2+1)/(2+3)
    model = NgramOracle("a b a b", order=2)
    lp = model.next_token_logits("a").entries[" b"]
    assert math.isclose(lp, math.log(3 / 5), abs_tol=1e-12)


def test_bigram_hand_value_two_lines():
    # Second line adds one more "a" continuation (into </s>): (2+1)/(3+3)
    model = NgramOracle("a b a b\nb a", order=2)
    lp = model.next_token_logits("a").entries[" b"]
    assert math.isclose(lp, math.log(1 / 2), abs_tol=1e-12)


def test_dense_distribution_sums_to_one(ngram):
    for context in ("", "the", "the cat", "zzz unseen"):
        entries = ngram.next_token_logits(context).entries
        assert math.isclose(math.fsum(math.exp(v) for v in entries.values()), 1.0, abs_tol=1e-9)


def test_oov_words_score_as_unseen(ngram):
    lp = ngram.score_output_span("the zebra", (1, 2))[0]
    assert math.isclose(lp, math.log(1 / (3 + ngram.vocab_size)), abs_tol=1e-12)


def test_reserved_symbols_rejected():
    with pytest.raises(OracleError):
        NgramOracle("a <s> b")
    with pytest.raises(OracleError):
        NgramOracle("a </s>")


def test_span_scores_match_conditional_queries(ngram):
    text = "the cat sat"
    direct = ngram.score_output_span(text, (1, 3))
    via_logits = conditional_span_scores(ngram, text, (1, 3))
    assert direct == pytest.approx(via_logits, abs=1e-12)


def test_span_scoring_is_context_conditional(ngram):
    # Same surface token, different context, different probability.
    a = ngram.score_output_span("the cat", (1, 2))[0]
    b = ngram.score_output_span("a cat", (1, 2))[0]
    assert a != b


def test_span_loss_rejects_empty():
    with pytest.raises(OracleError):
        span_loss([])


def test_generation_params_validate():
    with pytest.raises(ConfigError):
        GenerationParams(max_new_tokens=-1)
    with pytest.raises(ConfigError):
        GenerationParams(max_new_tokens=4, temperature=-1.0)
    with pytest.raises(ConfigError):
        GenerationParams(max_new_tokens=4, repetition_penalty=0.0)


def test_token_logits_argmax_prefers_lexicographic_on_ties():
    logits = TokenLogits(entries={" b": -1.0, " a": -1.0, " c": -2.0}, dense=True)
    assert logits.argmax() == " a"


def test_generation_is_seeded(ngram):
    params = GenerationParams(max_new_tokens=6, seed=9)
    first = ngram.generate("the", params)
    second = ngram.generate("the", params)
    assert first == second
    assert first != ngram.generate("the", GenerationParams(max_new_tokens=6, seed=10))


def test_repetition_penalty_discourages_repeats():
    model = NgramOracle("go go go go go stop", order=2)
    flat = GenerationParams(max_new_tokens=8, seed=0, greedy=True)
    assert model.generate("go", flat) == [" go"] * 8
    penalized = GenerationParams(max_new_tokens=8, seed=0, greedy=True, repetition_penalty=10.0)
    assert model.generate("go", penalized) != [" go"] * 8


# ---------------------------------------------------------------------------
# planted-rule oracle
# ---------------------------------------------------------------------------


def _span_scores(oracle, prompt, example):
    rendered = render(RenderTemplate(), prompt, example, oracle)
    return oracle.score_output_span(rendered.full_text, rendered.token_span)


def test_planted_separates_match_from_miss(planted_add):
    example = make_math_example("add_two", 9, 7)
    match = _span_scores(planted_add, "Sum the two numbers", example)
    miss = _span_scores(planted_add, "Paint the fence", example)
    assert set(match) == {planted_add.match_logprob}
    assert set(miss) == {planted_add.miss_logprob}
    assert planted_add.match_logprob == -0.1
    assert planted_add.miss_logprob == -3.0


def test_planted_keyword_in_example_text_does_not_leak(planted_add):
    # The rule only inspects the prompt region before the first example
    # input, so inputs mentioning keywords must not flip a miss.
    example = make_math_example("add_two", 2, 3)
    miss = _span_scores(planted_add, "do nothing", example)
    assert set(miss) == {planted_add.miss_logprob}


def test_planted_is_deterministic(planted_add):
    example = make_math_example("add_two", 4, 4)
    assert _span_scores(planted_add, "Sum them", example) == _span_scores(
        planted_add, "Sum them", example
    )


def test_planted_distributions_sum_to_one(planted_add):
    for context in ("", "Sum", "Given the input numbers 9 and 7, the output is"):
        entries = planted_add.next_token_logits(context).entries
        assert math.isclose(math.fsum(math.exp(v) for v in entries.values()), 1.0, abs_tol=1e-9)


def test_matching_prompt_continues_with_the_answer():
    dataset = generate_math_dataset("add_two", seed=0)
    oracle = oracle_for_task("add_two", dataset)
    example = dataset.examples[0]
    rendered = render(RenderTemplate(), "Sum the two numbers", example, oracle)
    tokens = oracle.generate(
        rendered.context_text, GenerationParams(max_new_tokens=4, greedy=True)
    )
    expected = [t for t in oracle.tokenize(example.output_text) if t.strip()]
    assert tokens == expected


def test_missing_prompt_continues_with_junk():
    dataset = generate_math_dataset("add_two", seed=0)
    oracle = oracle_for_task("add_two", dataset)
    example = dataset.examples[0]
    rendered = render(RenderTemplate(), "Irrelevant words here", example, oracle)
    tokens = oracle.generate(
        rendered.context_text, GenerationParams(max_new_tokens=2, greedy=True)
    )
    assert oracle.junk_word in tok.word(tokens[0])


def test_generation_samples_the_phrase_bank():
    oracle = PlantedRuleOracle(
        KeywordRule(keywords=("add",)),
        {"add the numbers": 0.9, "look away": 0.1},
    )
    texts = set()
    for seed in range(20):
        toks = oracle.generate("", GenerationParams(max_new_tokens=8, seed=seed))
        texts.add(oracle.detokenize(toks))
    assert "add the numbers" in texts


def test_phrase_bank_validation():
    rule = KeywordRule(keywords=("x",))
    with pytest.raises(OracleError):
        PlantedRuleOracle(rule, {})
    with pytest.raises(OracleError):
        PlantedRuleOracle(rule, {"ok": 1.0}, match_logprob=0.1)


def test_sparse_conditional_fallback_raises_capability_error():
    class SparseTop1(NgramOracle):
        def next_token_logits(self, context):
            dense = super().next_token_logits(context)
            top = max(dense.entries.items(), key=lambda kv: (kv[1], kv[0]))
            return TokenLogits(entries={top[0]: top[1]}, dense=False, remainder=-30.0)

    model = SparseTop1("the cat sat\nthe dog ran", order=2)
    with pytest.raises(CapabilityError):
        conditional_span_scores(model, "the cat jumped", (1, 3))
