"""File helpers shared by the CLI and the data module. Every write goes to a temporary file in
the destination directory and is then renamed over the target, so readers never see a partial
file.
"""

from __future__ import annotations

import csv
import io
import json
import os
from contextlib import suppress
from logging import getLogger
from pathlib import Path
from tempfile import NamedTemporaryFile
from typing import Any
from collections.abc import Iterable, Sequence

from nc_ensemble.errors import ReportFormatError

logger = getLogger(__name__)


def resolve_path(path: Path | str) -> Path:
    """Expand user paths (``~/*``), and make sure parent dirs exist"""
    path = Path(path).expanduser().absolute()
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def atomic_write_text(path: Path | str, text: str) -> Path:
    """Write text to a temp file next to ``path``, then rename it into place"""
    path = resolve_path(path)
    temp = NamedTemporaryFile(
        'w',
        dir=path.parent,
        prefix=f'.{path.name}.',
        suffix='.tmp',
        delete=False,
        encoding='utf-8',
        newline='',
    )
    try:
        with temp:
            temp.write(text)
            temp.flush()
            os.fsync(temp.fileno())
        os.replace(temp.name, path)
    except BaseException:
        with suppress(FileNotFoundError):
            os.unlink(temp.name)
        raise
    logger.debug(f'Wrote {path}')
    return path


def dump_json(data: Any) -> str:
    """Serialize to JSON with a stable layout, so equal data always gives equal bytes"""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + '\n'


def write_json(path: Path | str, data: Any) -> Path:
    return atomic_write_text(path, dump_json(data))


def read_json(path: Path | str) -> Any:
    """Read a JSON document; I/O errors propagate, malformed content raises
    :py:exc:`.ReportFormatError`
    """
    with open(Path(path).expanduser(), encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ReportFormatError(f'{path}: invalid JSON ({e})') from e


def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return atomic_write_text(path, format_csv(header, rows))


def format_float(value: float | None) -> str:
    """Full-precision decimal for CSV cells; ``None`` becomes an empty cell"""
    return '' if value is None else repr(float(value))
