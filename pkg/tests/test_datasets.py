"""Dataset generation, JSONL round trips, and render-span geometry."""

import json

import pytest

from promptsearch.datasets import (
    Dataset,
    Example,
    KeywordRule,
    MATH_TASKS,
    RenderTemplate,
    check_keywords,
    generate_math_dataset,
    keyword_rule_for,
    load_jsonl_dataset,
    make_math_example,
    render,
    write_jsonl,
)
from promptsearch.errors import DatasetError, RenderError
from promptsearch.oracles.tokens import WhitespaceTokenizer

TOK = WhitespaceTokenizer()


def test_all_tasks_have_keyword_rules():
    for task in MATH_TASKS:
        rule = keyword_rule_for(task)
        assert rule.keywords


def test_generator_is_deterministic():
    a = generate_math_dataset("add_two", seed=5)
    b = generate_math_dataset("add_two", seed=5)
    assert a.examples == b.examples
    c = generate_math_dataset("add_two", seed=6)
    assert a.examples != c.examples


def test_two_input_tasks_have_100_samples_one_input_10():
    assert len(generate_math_dataset("add_two", seed=0).examples) == 100
    assert len(generate_math_dataset("square_one", seed=0).examples) == 10


def test_unknown_task_lists_valid_names():
    with pytest.raises(DatasetError, match="add_two"):
        generate_math_dataset("mod_two", seed=0)


def test_empty_dataset_rejected():
    with pytest.raises(DatasetError):
        Dataset(name="empty", examples=())


def test_jsonl_round_trip(tmp_path):
    dataset = generate_math_dataset("max_two", seed=1)
    path = tmp_path / "max.jsonl"
    write_jsonl(dataset, path)
    loaded = load_jsonl_dataset(path)
    assert [e.input_text for e in loaded.examples] == [e.input_text for e in dataset.examples]
    assert [e.output_text for e in loaded.examples] == [e.output_text for e in dataset.examples]


def test_jsonl_rejects_missing_fields(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"input": "x"}) + "\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_jsonl_dataset(path)


def test_keyword_rule_is_case_insensitive_any_match():
    rule = KeywordRule(keywords=("add", "sum"))
    assert check_keywords(rule, "Sum the two numbers")
    assert check_keywords(rule, "you should ADD them")
    assert not check_keywords(rule, "multiply them")


def test_render_span_covers_output_exactly():
    example = make_math_example("add_two", 9, 7)
    rendered = render(RenderTemplate(), "Sum the numbers", example, TOK)
    lo, hi = rendered.char_span
    assert rendered.full_text[lo:hi] == example.output_text
    assert rendered.context_text + rendered.output_text == rendered.full_text
    t0, t1 = rendered.token_span
    assert "".join(rendered.tokens[t0:t1]) == example.output_text


def test_render_truncates_input_not_output():
    example = Example(input_text="w " * 300, output_text=" 5.\n\n")
    template = RenderTemplate(max_example_tokens=16)
    rendered = render(template, "p", example, TOK)
    assert rendered.truncated
    assert rendered.output_text == " 5.\n\n"


def test_render_rejects_output_over_budget():
    example = Example(input_text="x", output_text=" y" * 200)
    with pytest.raises(RenderError):
        render(RenderTemplate(max_example_tokens=8), "p", example, TOK)


def test_template_placeholder_validation():
    with pytest.raises(RenderError):
        RenderTemplate(pattern="{prompt} {input}")
    with pytest.raises(RenderError):
        RenderTemplate(pattern="{prompt} {prompt} {input}{output}")
