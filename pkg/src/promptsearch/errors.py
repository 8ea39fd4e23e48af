"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config errors -> 2, backend errors -> 3,
evaluation errors -> 4.
"""


class PromptSearchError(Exception):
    """Base class for all package errors."""


class ConfigError(PromptSearchError):
    """Invalid or unparseable run configuration."""


class DatasetError(PromptSearchError):
    """Malformed or empty dataset input."""


class RenderError(PromptSearchError):
    """A (template, prompt, example) triple could not be rendered."""


class SpanAlignmentError(RenderError):
    """The output span does not fall on token boundaries of the backend."""


class OracleError(PromptSearchError):
    """Base class for language-model backend failures."""


class TransportError(OracleError):
    """HTTP or network level failure after retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class CapabilityError(OracleError):
    """The backend does not support the requested operation."""


class GenerationError(OracleError):
    """Sampling could not proceed (e.g. all token mass penalized away)."""


class AveragingCoverageError(OracleError):
    """Sparse top-k logit sets share no tokens, so averaging is undefined."""


class SearchError(PromptSearchError):
    """The search loop cannot make progress (no candidates, bad state)."""


class EvalError(PromptSearchError):
    """Evaluation could not be computed (missing rules, empty rankings...)."""
