from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path
from typing import Any

from xmoco.errors import DatasetFormatError

LOGGER = logging.getLogger(__name__)


def canonical_json(obj: Any) -> str:  # noqa: ANN401
    """
    Serialize to compact JSON with sorted keys.

    Floats use Python's shortest round-trip representation, so equal values always produce equal text.

    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def iter_jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """
    Read a JSON Lines file record by record.

    Blank lines are skipped.

    Args:
        path (Path): The file to read.

    Yields:
        tuple[int, dict]: The 1-based line number and the decoded object.

    Raises:
        DatasetFormatError: If a line is not a JSON object.

    """
    with path.open(encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{line_number}: malformed JSON ({e.msg})") from e
            if not isinstance(record, dict):
                raise DatasetFormatError(f"{path}:{line_number}: expected a JSON object, got {type(record).__name__}")
            yield line_number, record


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]]) -> int:
    """
    Write records as JSON Lines, keeping each record's key order.

    Args:
        path (Path): The file to (over)write; parent folders are created.
        records (Iterable[Mapping]): The objects to write.

    Returns:
        int: The number of lines written.

    """
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as file:
        for record in records:
            file.write(json.dumps(record, ensure_ascii=False, allow_nan=False))
            file.write("\n")
            count += 1
    LOGGER.info(f"Stored {count} records to {path}")
    return count


def append_jsonl(path: Path, record: Mapping[str, Any]) -> None:
    """Append one record to a JSON Lines file, creating it if needed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8", newline="\n") as file:
        file.write(json.dumps(record, ensure_ascii=False, allow_nan=False))
        file.write("\n")


def get_recent_files(folder: Path, count: int, suffix: str = "") -> list[Path]:
    """
    Get the most recent files from a folder.

    Args:
        folder (Path): The folder to search for files.
        count (int): The number of recent files to return.
        suffix (str): Only consider files with this suffix (all files if empty).

    Returns:
        list[Path]: The list of recent file paths, newest first.

    """
    files = [f for f in folder.iterdir() if f.is_file() and f.name.endswith(suffix)]
    files.sort(key=lambda f: (f.stat().st_mtime, f.name), reverse=True)
    return files[:count]
