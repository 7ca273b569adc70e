"""Exception types shared across the package."""


class PaletteFieldError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateInput(PaletteFieldError):
    """Input points are coplanar/collinear (or too few) to build a 3D hull."""


class InteriorPoint(PaletteFieldError):
    """Queried facet distance for a point that lies inside the hull."""


class InvalidK(PaletteFieldError, ValueError):
    """Requested layer/palette count is out of the supported range."""


class IndexOutOfRange(PaletteFieldError, IndexError):
    """Palette index outside 0..K."""


class LengthMismatch(PaletteFieldError, ValueError):
    """Palette size does not match the alpha/weight vector length."""


class NotNormalized(PaletteFieldError, ValueError):
    """Barycentric weights do not sum to one within tolerance."""


class OutOfBounds(PaletteFieldError, IndexError):
    """Query position outside the grid or image bounds."""


class NoIntersection(PaletteFieldError):
    """Ray does not intersect the scene bounds."""


class ShapeMismatch(PaletteFieldError, ValueError):
    """Batched arrays disagree in shape."""


class NonFiniteLoss(PaletteFieldError, ArithmeticError):
    """Training produced a non-finite loss; carries step diagnostics."""

    def __init__(self, step, breakdown, max_grad):
        self.step = step
        self.breakdown = breakdown
        self.max_grad = max_grad
        super().__init__(
            f"non-finite loss at step {step}: {breakdown} (max |grad| = {max_grad})"
        )


class MissingFile(PaletteFieldError, FileNotFoundError):
    """Expected dataset file not found."""


class MalformedJson(PaletteFieldError, ValueError):
    """Dataset JSON could not be parsed or lacks required fields."""


class InconsistentResolution(PaletteFieldError, ValueError):
    """Frames of one dataset have differing image sizes."""


class UnsupportedFormat(PaletteFieldError, ValueError):
    """Image file could not be decoded."""


class VersionMismatch(PaletteFieldError, ValueError):
    """Checkpoint was written by an incompatible format version."""


class CorruptCheckpoint(PaletteFieldError, ValueError):
    """Checkpoint payload is truncated or fails its checksum."""
