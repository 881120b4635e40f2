"""Error taxonomy. Each failure class the pipeline can report maps to one type."""


class RankLoopError(Exception):
    """Base class for all library errors."""


class ConfigError(RankLoopError):
    """Invalid run configuration (unknown keys, bad types, bad values)."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ImageDecodeError(RankLoopError):
    """File exists but is not a decodable image."""


class UnsupportedImageError(RankLoopError):
    """Decodable, but not an 8-bit RGB or grayscale PNG."""


class ImageRangeError(RankLoopError):
    """Pixel data outside the unit interval."""


class ShapeError(RankLoopError):
    """Tensor shape or size violates an operation's contract."""


class CheckpointFormatError(RankLoopError):
    """Corrupt or inconsistent checkpoint file."""


class NumericError(RankLoopError):
    """Non-finite values where finite ones are required (losses, gradients)."""


class DegenerateDataError(RankLoopError):
    """Dataset too small, empty, or statistically degenerate for the operation."""


class StoreError(RankLoopError):
    """Vote/label store corruption or protocol violation."""


class DuplicateVoteError(StoreError):
    """Same (pair_id, annotator_id) voted twice."""


class StageStateError(RankLoopError):
    """Stage status machine violation or missing stage artifacts."""


class PendingVotesError(StageStateError):
    """Stage cannot advance: selected pairs still await votes."""

    def __init__(self, pending: int):
        self.pending = pending
        super().__init__(f"{pending} votes still pending for the current stage")


class DisconnectedGraphError(RankLoopError):
    """Preference comparison graph is not connected; carries the components."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(
            "comparison graph is disconnected: " + " | ".join(",".join(c) for c in self.components)
        )


class ConvergenceError(RankLoopError):
    """Iterative solver failed to reach its tolerance."""
