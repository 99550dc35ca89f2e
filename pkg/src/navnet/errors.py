"""Exception types shared across the package."""


class NavNetError(Exception):
    pass


class ShapeError(NavNetError, ValueError):
    pass


class ConfigError(NavNetError, ValueError):
    pass


class GenerationError(NavNetError):
    """Maze generation could not satisfy its constraints."""


class InfeasibleError(NavNetError):
    """No start/goal pair satisfies the sampling constraints."""


class ExpertFailed(NavNetError):
    """The clairvoyant expert did not reach the goal."""


class FormatError(NavNetError):
    """A weight or dataset file is malformed."""


class TrainingDiverged(NavNetError):
    def __init__(self, stage: str, step: int, message: str = "loss is NaN"):
        super().__init__(f"stage {stage}, step {step}: {message}")
        self.stage = stage
        self.step = step
