"""Exception types raised across the package."""


class TableBuildError(RuntimeError):
    """A lookup-table entry evaluated to a non-finite value."""


class TableFormatError(RuntimeError):
    """A table file is truncated, corrupt, or has the wrong version."""


class SceneError(ValueError):
    """Scene, camera, medium, or light parameters violate their invariants."""


class SolverError(RuntimeError):
    """A linear solve broke down or failed to reach the requested tolerance."""


class PipelineError(RuntimeError):
    """A reconstruction stage failed; carries the stage report in args."""


class ConfigError(ValueError):
    """Run configuration is missing keys or holds out-of-range values."""
