"""Plain-text tabular files: '#' metadata header, CSV body.

All run artifacts (datasets, schedules, archives, chains, ladders) use
this one format so they stay diffable and loadable without pickle.
Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly; parsing is strict (unknown columns or malformed rows
raise instead of being skipped).
"""

import numpy as np

from .errors import InputValidationError

_FLOAT_FMT = "%.17g"


def format_float(x):
    return _FLOAT_FMT % float(x)


def write_table(path, columns, arrays, metadata=None):
    """Write named columns (equal-length 1-d arrays) with optional
    ``# key = value`` metadata lines before the header."""
    arrays = [np.asarray(a) for a in arrays]
    if len(columns) != len(arrays):
        raise ValueError("one array per column required")
    n = arrays[0].shape[0] if arrays else 0
    for name, arr in zip(columns, arrays):
        if arr.ndim != 1 or arr.shape[0] != n:
            raise ValueError(f"column {name} must be 1-d of length {n}")
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key} = {_format_meta(value)}\n")
        fh.write(",".join(columns) + "\n")
        for i in range(n):
            cells = []
            for arr in arrays:
                v = arr[i]
                if np.issubdtype(arr.dtype, np.integer):
                    cells.append(str(int(v)))
                else:
                    cells.append(format_float(v))
            fh.write(",".join(cells) + "\n")


def _format_meta(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(_format_meta(v) for v in value)
    raise ValueError(f"unsupported metadata type {type(value)!r}")


def read_table(path, expected_columns=None):
    """Read a table written by ``write_table``.

    Returns ``(metadata, columns)`` where metadata maps keys to raw
    strings and columns maps names to float arrays.  If
    ``expected_columns`` is given the header must match it exactly.
    """
    metadata = {}
    header = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if header is not None:
                    raise InputValidationError(
                        f"{path}:{lineno}: metadata after header")
                body = line[1:].strip()
                if "=" not in body:
                    raise InputValidationError(
                        f"{path}:{lineno}: malformed metadata line")
                key, _, value = body.partition("=")
                metadata[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            cells = line.split(",")
            if len(cells) != len(header):
                raise InputValidationError(
                    f"{path}:{lineno}: expected {len(header)} cells, "
                    f"got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise InputValidationError(
                    f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise InputValidationError(f"{path}: missing header line")
    if expected_columns is not None and header != list(expected_columns):
        raise InputValidationError(
            f"{path}: header {header} does not match expected "
            f"{list(expected_columns)}")
    data = np.array(rows, dtype=float) if rows else \
        np.empty((0, len(header)))
    return metadata, {name: data[:, j] for j, name in enumerate(header)}


def parse_float_list(text):
    try:
        return np.array([float(part) for part in text.split(",")])
    except ValueError as exc:
        raise InputValidationError(f"bad float list {text!r}: {exc}") \
            from None
