class ArtikitError(Exception):
    """Base class for every error raised by the package."""


class BundleError(ArtikitError):
    """A clip bundle on disk is missing files, malformed, or violates an invariant."""


class InvariantError(BundleError, ValueError):
    """A value violates a documented domain invariant."""


class DegenerateError(ArtikitError, ValueError):
    """Input geometry does not determine the requested model."""


class NoInteractionError(ArtikitError):
    """The trajectory carries no contact frames."""

    def __init__(self, msg="no interaction detected"):
        super().__init__(msg)


class RejectedEstimate(ArtikitError):
    """An estimate failed its acceptance test; counts as a missed detection."""

    def __init__(self, reason, diagnostics=None):
        super().__init__(reason)
        self.reason = reason
        self.diagnostics = diagnostics or {}


class UnresolvedMotionType(ArtikitError):
    def __init__(self, msg="motion type unresolved"):
        super().__init__(msg)


class SchemaError(ArtikitError, ValueError):
    """An injected reasoner file or config file does not match its schema."""
