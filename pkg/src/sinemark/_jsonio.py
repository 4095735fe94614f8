"""Serialization helpers: fixed-precision float text and atomic file writes.

Record and key files carry every float with 17 significant digits so a
value read back parses to the identical double.
"""

import json
import math
import os
import tempfile


def format_float(x):
    """Render a finite float with 17 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value cannot be serialized: {x!r}")
    return format(x, ".16e")


def format_float_list(values):
    return "[" + ", ".join(format_float(v) for v in values) + "]"


def dumps_record(obj):
    """One-line JSON for a record dict, floats at full precision.

    Ints, bools, strings and (nested) lists are supported; floats are
    emitted via format_float so round-trips are exact.
    """
    return _encode(obj)


def _encode(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_encode(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    if value is None:
        return "null"
    try:
        return _encode(value.item())  # numpy scalars
    except AttributeError:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def atomic_write_text(path, text):
    """Write text to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
