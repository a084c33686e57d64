"""Exception types shared across the package.

Everything raised here is a data/pipeline error; the CLI maps CerError to
exit code 2 and reserves exit code 1 for usage errors.
"""


class CerError(Exception):
    """Base class for data and pipeline errors."""


class CorpusFormatError(CerError):
    """Corpus or claims file violates the JSON-lines contract."""


class EmbeddingError(CerError):
    """Embedding provider failure (remote errors, dim drift, empty input)."""


class DegenerateVectorError(EmbeddingError):
    """A (near-)zero vector was used where a direction is required."""


class LexiconError(CerError):
    """Subjectivity lexicon missing or empty after parsing."""


class MiningError(CerError):
    """Triplet mining preconditions violated (no positives, empty pool)."""


class TrainingError(CerError):
    """Non-finite loss/gradient or unreachable embeddings during training."""


class PersistenceError(CerError):
    """Corrupt, truncated, or version-incompatible on-disk artifact."""


class IndexMismatchError(CerError):
    """Query-time projection head does not match the one the index was built with."""


class ExplainError(CerError):
    """Attribution or re-ranking called with incompatible inputs."""


class EvalError(CerError):
    """No evaluable claims or inconsistent evaluation inputs."""


class ConfigError(CerError):
    """Pipeline configuration file is invalid."""
