"""Exception types shared across the package."""


class PoseFlowError(Exception):
    """Base class for all package errors."""


class DegenerateInput(PoseFlowError, ValueError):
    pass


class BehindCamera(PoseFlowError, ValueError):
    def __init__(self, indices):
        self.indices = list(int(i) for i in indices)
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"points behind camera at indices {shown}{more}")


class EmptyRender(PoseFlowError):
    pass


class DimensionMismatch(PoseFlowError, ValueError):
    pass


class ChannelMismatch(PoseFlowError, ValueError):
    pass


class LengthMismatch(PoseFlowError, ValueError):
    pass


class InsufficientViews(PoseFlowError, ValueError):
    pass


class DivergedPose(PoseFlowError):
    pass


class MalformedFile(PoseFlowError, ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
