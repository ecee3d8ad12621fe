"""Exception types shared across the package."""


class GoalnavError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GoalnavError):
    """Invalid or unreadable run/CLI configuration."""


class SceneError(GoalnavError):
    """Scene file failed to load or violates scene invariants."""


class GenerationError(GoalnavError):
    """Scene generation received infeasible parameters or could not place entities."""


class CrossFloorError(GoalnavError):
    """An operation mixed world positions on different floors."""


class SelectionError(GoalnavError):
    """Direction or candidate selection had no valid option."""


class OracleError(GoalnavError):
    """Base class for perception-oracle failures."""


class OracleHTTPError(OracleError):
    """Remote oracle returned a non-success HTTP status after retries."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"oracle endpoint returned HTTP {status}: {detail}")
        self.status = status


class OracleTimeoutError(OracleError):
    """Remote oracle did not answer within the configured attempts."""


class ParseError(OracleError):
    """An oracle response could not be parsed; carries the offending fragment."""

    def __init__(self, message: str, fragment: str = ""):
        super().__init__(message if not fragment else f"{message}: {fragment!r}")
        self.fragment = fragment
