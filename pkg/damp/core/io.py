"""
File helpers: atomic writes and UTF-8 TSV.
"""
from __future__ import annotations

import contextlib
import os
import tempfile
from collections.abc import Callable, Iterable, Iterator, Sequence
from pathlib import Path
from typing import IO


@contextlib.contextmanager
def atomic_open(path: Path, mode: str = "w") -> Iterator[IO]:
    """Write to a temp file next to `path`, then rename over it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        if "b" in mode:
            handle = os.fdopen(fd, mode)
        else:
            handle = os.fdopen(fd, mode, encoding="utf-8", newline="\n")
        with handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_tsv(path: Path, header: Sequence[str] | None, rows: Iterable[Sequence[object]]) -> int:
    count = 0
    with atomic_open(path) as handle:
        if header is not None:
            handle.write("\t".join(header) + "\n")
        for row in rows:
            handle.write("\t".join(str(v) for v in row) + "\n")
            count += 1
    return count


def read_tsv(path: Path, *, header: bool = True) -> list[list[str]]:
    with Path(path).open(encoding="utf-8") as handle:
        rows = [line.rstrip("\n").split("\t") for line in handle if line.strip()]
    return rows[1:] if header else rows


def numbered_lines(
    path: Path, invalid: Callable[[int, UnicodeDecodeError], Exception]
) -> Iterator[tuple[int, str]]:
    """(line number, text) pairs; a line that is not UTF-8 raises `invalid(lineno, exc)`."""
    with Path(path).open("rb") as handle:
        for lineno, data in enumerate(handle, start=1):
            try:
                text = data.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise invalid(lineno, exc) from exc
            yield lineno, text
