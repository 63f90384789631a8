"""Exception types shared across pipeline stages."""


class DataError(Exception):
    """Input data violates a documented contract (bad row, dangling id,
    missing coverage). Maps to exit code 2 in the CLI."""


class ServiceError(Exception):
    """A request to the annotation service cannot be honored (unqualified
    worker, closed assignment, unknown split)."""

    def __init__(self, message: str, status_code: int = 400):
        super().__init__(message)
        self.status_code = status_code
