class VoxcellError(Exception):
    """Base class for errors raised by voxcell."""


class VoxelFormatError(VoxcellError):
    pass


class SizeMismatchError(VoxelFormatError):
    def __init__(self, path, expected_bytes: int, actual_bytes: int):
        self.path = str(path)
        self.expected_bytes = int(expected_bytes)
        self.actual_bytes = int(actual_bytes)
        super().__init__(
            f"{self.path}: expected {self.expected_bytes} bytes from the sidecar, "
            f"found {self.actual_bytes}"
        )


class GeometryError(VoxcellError):
    pass


class SolverError(VoxcellError):
    pass


class DivergenceError(SolverError):
    def __init__(self, iteration: int, message: str = "NaN encountered"):
        self.iteration = int(iteration)
        super().__init__(f"{message} at iteration {self.iteration}")


class RankError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, case: int | None = None, report=None):
        self.case = case
        self.report = report
        super().__init__(message if case is None else f"load case {case}: {message}")


class SingularSystemWarning(UserWarning):
    pass
