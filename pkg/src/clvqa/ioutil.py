"""Small file helpers shared across modules.

All artifact writes go through atomic_write_text: content is written to a
temp file in the target directory and renamed into place, so readers never
observe partial files and reruns either fully replace an artifact or leave
the old one intact.
"""

import json
import os
import tempfile


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_jsonl(path, rows):
    lines = [json.dumps(r, sort_keys=True) for r in rows]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def fmt_float(x):
    """Shortest round-trip decimal form, used for all CSV numbers."""
    return repr(float(x))


def write_csv(path, header, rows):
    """Rows are sequences; floats are formatted with fmt_float, None as ''."""
    out = []
    if header is not None:
        out.append(",".join(header))
    for row in rows:
        cells = []
        for c in row:
            if c is None:
                cells.append("")
            elif isinstance(c, float):
                cells.append(fmt_float(c))
            else:
                cells.append(str(c))
        out.append(",".join(cells))
    atomic_write_text(path, "\n".join(out) + "\n")
