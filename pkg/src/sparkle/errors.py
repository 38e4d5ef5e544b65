"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2,
worker/transport problems exit 3.
"""


class SparkleError(Exception):
    pass


class ValidationError(SparkleError):
    """Invalid inputs, malformed files, or violated contracts."""


class WorkerError(SparkleError):
    """A model worker failed: transport errors, exhausted retries,
    or a response that violates the worker contract."""
