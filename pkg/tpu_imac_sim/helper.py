import contextlib
import json
import os
import shutil
import tempfile
import textwrap
import typing as t
from pathlib import Path

from tpu_imac_sim.logger import logger


def chunks(seq: t.Sequence, n: int):
    """Yield successive n-sized chunks from seq."""
    for i in range(0, len(seq), n):
        yield seq[i : i + n]


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@contextlib.contextmanager
def atomic_open(path: t.Union[str, Path], mode: str = "w"):
    """Open a temporary file that replaces ``path`` when the block exits.

    Readers never observe a partially written file: on error the temporary
    file is removed and ``path`` is left untouched. The temporary file lives
    next to the target so the rename stays on one filesystem.

    Args:
        path: Destination file.
        mode: ``"w"`` for text (UTF-8, ``\\n`` newlines) or ``"wb"`` for bytes.

    Yields:
        The open temporary file object.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        if "b" in mode:
            f = os.fdopen(fd, mode)
        else:
            f = os.fdopen(fd, mode, encoding="utf-8", newline="\n")
        with f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.debug(f"Wrote {path}")


def atomic_write_bytes(path: t.Union[str, Path], data: bytes) -> Path:
    with atomic_open(path, "wb") as f:
        f.write(data)
    return Path(path)


def atomic_write_text(path: t.Union[str, Path], text: str) -> Path:
    with atomic_open(path, "w") as f:
        f.write(text)
    return Path(path)


def write_json(path: t.Union[str, Path], data: t.Any) -> Path:
    """Atomically write data as indented JSON."""
    return atomic_write_text(path, json.dumps(data, indent=2) + "\n")


def ensure_dir(path: t.Union[str, Path]) -> Path:
    """Create ``path`` if needed and fail if it exists as a file."""
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise NotADirectoryError(f"Output path {path} exists and is not a directory")
    path.mkdir(parents=True, exist_ok=True)
    return path


@contextlib.contextmanager
def staged_dir(path: t.Union[str, Path]):
    """Collect files in a hidden sibling directory, then move them into ``path``.

    On error the staging directory is removed and ``path`` is neither created
    nor changed, so a failed run leaves no partial output behind.

    Yields:
        Path: The staging directory to write into.
    """
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise NotADirectoryError(f"Output path {path} exists and is not a directory")
    path.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield stage
        path.mkdir(exist_ok=True)
        for item in sorted(stage.iterdir()):
            os.replace(item, path / item.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def msg_box(msg, indent=1, width=None, title=None):
    """Print message-box with optional title."""
    if width is None and len(msg) > 80:
        width = 80
        lines = []
        for line in msg.splitlines():
            lines.extend(textwrap.wrap(line, width) or [""])
        msg = "\n".join(lines)

    lines = msg.split("\n")
    space = " " * indent
    if not width:
        width = max(map(len, lines + [title or ""]))
    box = f'╔{"═" * (width + indent * 2)}╗\n'
    if title:
        box += f"║{space}{title:<{width}}{space}║\n"
        box += f'║{space}{"-" * len(title):<{width}}{space}║\n'
    box += "".join([f"║{space}{line:<{width}}{space}║\n" for line in lines])
    box += f'╚{"═" * (width + indent * 2)}╝'
    return box
