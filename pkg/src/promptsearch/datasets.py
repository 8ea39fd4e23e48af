"""Datasets of input/output string pairs and the rules for judging prompts.

Provides the ten synthetic math task generators, a JSONL loader for external
tasks, render templates that splice a prompt around an example while tracking
the scored output span, and keyword-containment correctness rules.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

from .errors import DatasetError, RenderError, SpanAlignmentError

TWO_INPUT_SAMPLES = 100
ONE_INPUT_SAMPLES = 10
DEFAULT_MAX_EXAMPLE_TOKENS = 128

# Format strings shared by all synthetic tasks; the trailing blank line is
# part of the example text and belongs to the output span.
_TWO_INPUT_FMT = "Given the input numbers {a} and {b}, the answer is"
_ONE_INPUT_FMT = "Given the input x is {x}, the output f(x) is"


@dataclass(frozen=True)
class Example:
    """One input/output pair. ``input_text + output_text`` is the full
    example string as it appears during scoring."""

    input_text: str
    output_text: str
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.output_text:
            raise DatasetError("example output_text must be non-empty")

    @property
    def full_text(self) -> str:
        return self.input_text + self.output_text


@dataclass(frozen=True)
class KeywordRule:
    """Case-insensitive substring rule deciding whether a candidate prompt
    describes the task (e.g. any of ``add``, ``sum``, ``+``)."""

    keywords: tuple[str, ...]

    def __post_init__(self):
        if not self.keywords:
            raise DatasetError("keyword rule must list at least one keyword")
        object.__setattr__(
            self, "keywords", tuple(k.lower() for k in self.keywords)
        )


@dataclass(frozen=True)
class Dataset:
    name: str
    examples: tuple[Example, ...]
    keyword_rule: KeywordRule | None = None
    ground_truth_description: str | None = None
    verbalizer: Mapping[str, str] | None = None

    def __post_init__(self):
        if not self.examples:
            raise DatasetError(f"dataset {self.name!r}: empty dataset")
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self) -> int:
        return len(self.examples)


def check_keywords(rule: KeywordRule, candidate: str) -> bool:
    """True iff the lowercased candidate contains any rule keyword."""
    lowered = candidate.lower()
    return any(k in lowered for k in rule.keywords)


# ---------------------------------------------------------------------------
# Synthetic math generators
# ---------------------------------------------------------------------------


def _divide_answer(a: int, b: int) -> str:
    # Plain integer when divisible, otherwise a reduced fraction ("2/7").
    if a % b == 0:
        return str(a // b)
    g = math.gcd(a, b)
    return f"{a // g}/{b // g}"


def fibonacci(n: int) -> int:
    """xth Fibonacci number with f(1) = f(2) = 1."""
    if n < 1:
        raise DatasetError(f"fibonacci defined for x >= 1, got {n}")
    a, b = 1, 1
    for _ in range(n - 1):
        a, b = b, a + b
    return a


@dataclass(frozen=True)
class _TaskSpec:
    arity: int
    answer: Callable[..., str]
    description: str


MATH_TASKS: dict[str, _TaskSpec] = {
    "add_two": _TaskSpec(2, lambda a, b: str(a + b), "Return the sum of the inputs."),
    "subtract_two": _TaskSpec(2, lambda a, b: str(a - b), "Return the difference of the inputs."),
    "multiply_two": _TaskSpec(2, lambda a, b: str(a * b), "Return the product of the inputs."),
    "divide_two": _TaskSpec(2, _divide_answer, "Return the quotient of the inputs."),
    "max_two": _TaskSpec(2, lambda a, b: str(max(a, b)), "Return the maximum of the inputs."),
    "first_two": _TaskSpec(2, lambda a, b: str(a), "Return the first of the inputs."),
    "square_one": _TaskSpec(1, lambda x: str(x * x), "Square the input to get the output."),
    "exp_one": _TaskSpec(1, lambda x: f"{math.exp(x):.2f}", "Exponentiate the input to get the output."),
    "double_one": _TaskSpec(1, lambda x: str(2 * x), "Given an input x, return 2*x."),
    "fibonacci_one": _TaskSpec(1, lambda x: str(fibonacci(x)), "Given an input x, return the xth fibonacci number."),
}


def make_math_example(task: str, *operands: int) -> Example:
    """Build the example for explicit operands, byte-identical to the
    generator's output for the same values."""
    spec = _task_spec(task)
    if len(operands) != spec.arity:
        raise DatasetError(f"{task} takes {spec.arity} operand(s), got {len(operands)}")
    answer = spec.answer(*operands)
    if spec.arity == 2:
        a, b = operands
        input_text = _TWO_INPUT_FMT.format(a=a, b=b)
        meta = {"task": task, "a": str(a), "b": str(b)}
    else:
        (x,) = operands
        input_text = _ONE_INPUT_FMT.format(x=x)
        meta = {"task": task, "x": str(x)}
    return Example(input_text=input_text, output_text=f" {answer}.\n\n", metadata=meta)


def _task_spec(task: str) -> _TaskSpec:
    try:
        return MATH_TASKS[task]
    except KeyError:
        valid = ", ".join(sorted(MATH_TASKS))
        raise DatasetError(f"unknown task {task!r}; valid tasks: {valid}") from None


def generate_math_dataset(task: str, seed: int) -> Dataset:
    """Generate the synthetic dataset for one of the ten math tasks.

    Two-input tasks draw operands uniformly from [0, 9] (divide excludes a
    zero divisor) and yield 100 examples; one-input tasks draw from [1, 10]
    and yield 10. Deterministic: the same (task, seed) always produces a
    byte-identical dataset.
    """
    spec = _task_spec(task)
    rng = random.Random(seed)
    examples = []
    if spec.arity == 2:
        for _ in range(TWO_INPUT_SAMPLES):
            a = rng.randint(0, 9)
            if task == "divide_two":
                b = rng.randint(1, 9)
            else:
                b = rng.randint(0, 9)
            examples.append(make_math_example(task, a, b))
    else:
        for _ in range(ONE_INPUT_SAMPLES):
            x = rng.randint(1, 10)
            examples.append(make_math_example(task, x))
    return Dataset(
        name=task,
        examples=tuple(examples),
        keyword_rule=keyword_rule_for(task),
        ground_truth_description=spec.description,
    )


# ---------------------------------------------------------------------------
# Keyword rule file
# ---------------------------------------------------------------------------


def load_keyword_rules(path: str | Path | None = None) -> dict[str, KeywordRule]:
    """Load a JSON map of task name -> keyword list. Defaults to the
    packaged rules for the ten synthetic tasks."""
    if path is None:
        text = resources.files("promptsearch.data").joinpath("keyword_rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    raw = json.loads(text)
    return {name: KeywordRule(tuple(words)) for name, words in raw.items()}


_PACKAGED_RULES: dict[str, KeywordRule] | None = None


def keyword_rule_for(task: str) -> KeywordRule:
    global _PACKAGED_RULES
    if _PACKAGED_RULES is None:
        _PACKAGED_RULES = load_keyword_rules()
    try:
        return _PACKAGED_RULES[task]
    except KeyError:
        raise DatasetError(f"no keyword rule recorded for task {task!r}") from None


# ---------------------------------------------------------------------------
# JSONL ingestion
# ---------------------------------------------------------------------------


def load_jsonl_dataset(
    path: str | Path,
    verbalizer: Mapping[str, str] | None = None,
    keyword_rule: KeywordRule | None = None,
) -> Dataset:
    """Load a dataset from a JSONL file of {"input", "output"[, "label"]}.

    When a verbalizer is given, the record's label (falling back to the
    stripped output) is mapped through it and the answer token is stored
    with a leading space, e.g. positive -> " Yes".
    """
    path = Path(path)
    examples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            if not isinstance(record, dict) or "input" not in record or "output" not in record:
                raise DatasetError(f"{path}:{lineno}: expected object with 'input' and 'output'")
            input_text = record["input"]
            output_text = record["output"]
            if not isinstance(input_text, str) or not isinstance(output_text, str):
                raise DatasetError(f"{path}:{lineno}: 'input' and 'output' must be strings")
            if verbalizer is not None:
                label = record.get("label", output_text.strip())
                if label not in verbalizer:
                    raise DatasetError(f"{path}:{lineno}: label {label!r} not in verbalizer")
                output_text = " " + verbalizer[label]
            examples.append(
                Example(input_text=input_text, output_text=output_text, metadata={"line": str(lineno)})
            )
    if not examples:
        raise DatasetError(f"{path}: empty dataset")
    return Dataset(
        name=path.stem,
        examples=tuple(examples),
        keyword_rule=keyword_rule,
        verbalizer=verbalizer,
    )


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    """Write examples as JSONL (UTF-8, LF endings), one object per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            fh.write(json.dumps({"input": ex.input_text, "output": ex.output_text}, ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Render templates
# ---------------------------------------------------------------------------


class Tokenizer(Protocol):
    """Minimal tokenization contract needed to place the output span."""

    def tokenize(self, text: str) -> list[str]: ...

    def detokenize(self, tokens: Iterable[str]) -> str: ...


@dataclass(frozen=True)
class RenderTemplate:
    """Rule turning (prompt, input, output) into one scoring string.

    The pattern must contain ``{input}`` and ``{output}`` exactly once and
    ``{prompt}`` at most once; the ``{output}`` placeholder marks the token
    span that gets scored.
    """

    pattern: str = "{prompt}\n\n{input}{output}"
    max_example_tokens: int = DEFAULT_MAX_EXAMPLE_TOKENS

    def __post_init__(self):
        for placeholder in ("{input}", "{output}"):
            if self.pattern.count(placeholder) != 1:
                raise RenderError(f"pattern must contain {placeholder} exactly once")
        if self.pattern.count("{prompt}") > 1:
            raise RenderError("pattern may contain {prompt} at most once")
        if self.max_example_tokens < 1:
            raise RenderError("max_example_tokens must be positive")


@dataclass(frozen=True)
class RenderedExample:
    full_text: str
    # Half-open ranges covering output_text, in characters of full_text and
    # in tokens of the tokenizer used to render.
    char_span: tuple[int, int]
    token_span: tuple[int, int]
    tokens: tuple[str, ...]
    truncated: bool = False

    @property
    def context_text(self) -> str:
        return self.full_text[: self.char_span[0]]

    @property
    def output_text(self) -> str:
        return self.full_text[self.char_span[0] : self.char_span[1]]


def _substitute(fragment: str, prompt: str, input_text: str) -> str:
    return fragment.replace("{prompt}", prompt).replace("{input}", input_text)


def render(
    template: RenderTemplate,
    prompt: str,
    example: Example,
    tokenizer: Tokenizer,
) -> RenderedExample:
    """Render a scoring string and locate the output span in it.

    The example's input is truncated from the right to fit the template's
    token budget; the output span is never cut. Raises SpanAlignmentError
    when the output does not start and end on token boundaries of the given
    tokenizer, and RenderError when the output alone exceeds the budget.
    """
    output_tokens = tokenizer.tokenize(example.output_text)
    input_tokens = tokenizer.tokenize(example.input_text)
    input_budget = template.max_example_tokens - len(output_tokens)
    if input_budget < 0:
        raise RenderError(
            f"example too long: output spans {len(output_tokens)} tokens, "
            f"budget is {template.max_example_tokens}"
        )
    truncated = len(input_tokens) > input_budget
    input_text = (
        tokenizer.detokenize(input_tokens[:input_budget]) if truncated else example.input_text
    )

    marker = template.pattern.index("{output}")
    prefix = _substitute(template.pattern[:marker], prompt, input_text)
    suffix = _substitute(template.pattern[marker + len("{output}") :], prompt, input_text)
    full_text = prefix + example.output_text + suffix
    char_span = (len(prefix), len(prefix) + len(example.output_text))

    tokens = tokenizer.tokenize(full_text)
    token_span = _locate_token_span(tokens, char_span, full_text)
    return RenderedExample(
        full_text=full_text,
        char_span=char_span,
        token_span=token_span,
        tokens=tuple(tokens),
        truncated=truncated,
    )


def _locate_token_span(
    tokens: list[str], char_span: tuple[int, int], full_text: str
) -> tuple[int, int]:
    boundaries = [0]
    for tok in tokens:
        boundaries.append(boundaries[-1] + len(tok))
    if boundaries[-1] != len(full_text):
        raise SpanAlignmentError("tokenizer does not partition the rendered text")
    try:
        start = boundaries.index(char_span[0])
        end = boundaries.index(char_span[1])
    except ValueError:
        raise SpanAlignmentError(
            f"output span {char_span} does not align with token boundaries"
        ) from None
    return (start, end)
