"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parseable prefix of its one-line failure message.
"""

from __future__ import annotations


class TeInfluenceError(Exception):
    category = "error"


class InvalidArgumentError(TeInfluenceError, ValueError):
    category = "invalid-argument"


class InsufficientDataError(TeInfluenceError, ValueError):
    category = "insufficient-data"


class InvalidStateError(TeInfluenceError, ValueError):
    category = "invalid-state"


class ParseError(TeInfluenceError, ValueError):
    category = "parse-error"

    def __init__(self, message: str, path=None, row: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.row = row


class CheckpointError(TeInfluenceError, ValueError):
    category = "checkpoint-parse"


class TrainingDivergedError(TeInfluenceError, RuntimeError):
    category = "training-diverged"

    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
