"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
everything else under HdrnmtError -> 3 (runtime / numerical).
"""


class HdrnmtError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HdrnmtError):
    """Invalid configuration: bad flag value, scheme/encoder mismatch, bad key."""


class DataError(HdrnmtError):
    """Malformed or inconsistent input data (parse errors carry line numbers)."""


class AlignmentError(DataError):
    """Parallel inputs with mismatched counts."""


class LexiconError(DataError):
    """Reference to a synset id that the lexicon does not contain."""


class CapacityError(DataError):
    """A single example exceeds the token budget of a batch."""


class DimensionError(HdrnmtError):
    """Tensor shapes incompatible with the requested operation."""


class LengthError(HdrnmtError):
    """Token sequence longer than the model's position table."""


class VocabularyError(HdrnmtError):
    """Token id outside the embedding table."""


class DegenerateMaskError(HdrnmtError):
    """A softmax slice with every position masked out."""


class DegenerateVectorError(HdrnmtError):
    """A zero-norm vector where a direction is required."""


class LabelError(HdrnmtError):
    """Class index outside the valid range."""


class TrainingStateError(HdrnmtError):
    """Optimizer invoked in an inconsistent state (e.g. missing gradient)."""


class NumericalError(HdrnmtError):
    """Non-finite value produced where finite values are required."""


class CheckpointError(HdrnmtError):
    """Unreadable, truncated, or version-incompatible checkpoint."""
