"""``key = value`` metadata files and float formatting shared by all writers."""
from __future__ import annotations

import math

from .errors import InvalidInputError


def fmt_float(v) -> str:
    """Shortest round-tripping text for a float (``repr``), ``nan``/``inf`` spelled out."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_kv(path, items) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items:
            if "=" in k or "\n" in str(v):
                raise InvalidInputError(f"cannot encode key {k!r}")
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = fmt_float(v)
            fh.write(f"{k} = {v}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise InvalidInputError(f"not a boolean: {v!r}")
