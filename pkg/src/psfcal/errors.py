"""Exception hierarchy shared by every stage of the calibration pipeline."""


class PsfCalError(Exception):
    """Base class for all pipeline errors."""


class InvalidInput(PsfCalError, ValueError):
    pass


class NoBimodalStructure(PsfCalError):
    """Raised when a patch has no dark/bright separation to threshold."""


class EmptyRoi(PsfCalError):
    pass


class DegenerateKernel(PsfCalError):
    pass


class SingularSystem(PsfCalError):
    pass


class NonFiniteLoss(PsfCalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class CalibrationFailed(PsfCalError):
    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = dict(failures or {})


class NoEdgeFound(PsfCalError):
    pass


class DivergentRestoration(PsfCalError):
    pass
