"""Exception types shared across the package."""


class CsipmError(Exception):
    """Base class for all package errors."""


class PositionOutOfScene(CsipmError, ValueError):
    pass


class SubcarrierOutOfRange(CsipmError, IndexError):
    pass


class VehicleLeftScene(CsipmError):
    """Raised by a kinematic update that moves the vehicle past a street end."""


class UnmatchedRecord(CsipmError):
    """CAM/CSI entries without a partner inside the join tolerance."""

    def __init__(self, count: int):
        super().__init__(f"{count} stream record(s) had no partner within tolerance")
        self.count = count


class TraceTooShort(CsipmError):
    pass


class MalformedFile(CsipmError, ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class MalformedCheckpoint(MalformedFile):
    pass


class WidthMismatch(CsipmError, ValueError):
    pass


class ShapeMismatch(CsipmError, ValueError):
    pass


class EmptySplit(CsipmError, ValueError):
    pass


class ConfigError(CsipmError, ValueError):
    pass
