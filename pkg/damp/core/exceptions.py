"""
Exception hierarchy.

Every error raised on purpose by the package derives from DampError. The CLI
maps the three families below to exit codes in one place (see damp.main).
"""
from __future__ import annotations


class DampError(Exception):
    """Base class for all package errors."""

    exit_code: int = 3


# ── Usage (exit 1) ─────────────────────────────────────
class UsageError(DampError):
    exit_code = 1


class ConfigError(UsageError):
    def __init__(self, message: str, *, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.key = key


# ── Data (exit 2) ──────────────────────────────────────
class DataError(DampError, ValueError):
    exit_code = 2


class CorpusFormatError(DataError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class SplitError(DataError):
    pass


class EmbeddingFormatError(DataError):
    def __init__(self, path: str, word: str, message: str, line: int | None = None):
        where = path if line is None else f"{path}:{line}"
        super().__init__(f"{where}: word '{word}': {message}")
        self.word = word
        self.line = line


class AlignmentError(DataError):
    def __init__(self, position: int, message: str):
        super().__init__(f"skeleton mismatch at position {position}: {message}")
        self.position = position


class RelevanceError(DataError):
    def __init__(self, domain: str, message: str):
        super().__init__(f"domain '{domain}': {message}")
        self.domain = domain


# ── Model / checkpoint (exit 3) ────────────────────────
class ModelError(DampError):
    exit_code = 3


class ShapeError(ModelError, ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]):
        rendered = ", ".join("x".join(str(d) for d in s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes ({rendered})")
        self.op = op
        self.shapes = shapes


class CheckpointError(ModelError):
    pass


class DecodingError(ModelError):
    pass
