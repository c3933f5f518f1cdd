"""Exception hierarchy shared by every sparself module."""


class LightFieldError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    @property
    def code(self) -> str:
        return type(self).__name__


class NonPositiveDepth(LightFieldError, ValueError):
    pass


class NonPositiveInverseDepth(LightFieldError, ValueError):
    pass


class MissingView(LightFieldError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimensionMismatch(LightFieldError, ValueError):
    pass


class EmptyMask(LightFieldError, ValueError):
    pass


class EmptyGradient(LightFieldError, ValueError):
    pass


class Diverged(LightFieldError, FloatingPointError):
    pass


class IndivisibleDims(LightFieldError, ValueError):
    pass


class SceneBehindCamera(LightFieldError, ValueError):
    pass


class LengthMismatch(LightFieldError, ValueError):
    pass


class ManifestError(LightFieldError, ValueError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


class MissingFile(ManifestError, FileNotFoundError):
    pass


class DimMismatch(ManifestError):
    pass
