"""Deterministic, atomic file output and config fingerprinting.

Every artifact embeds the sha256 of the config document plus the effective
seed, so a run can be reproduced from any of its outputs.  Writes go to a
temp file in the target directory and are renamed into place, so a crashed
run never leaves a partial file.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path


def canonical_json(doc) -> str:
    """Stable JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(doc, sort_keys=True, indent=2, separators=(",", ": ")) + "\n"


def config_hash(doc) -> str:
    """sha256 hex digest of the canonical compact form of a JSON document."""
    compact = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc: dict, provenance: dict | None = None) -> None:
    """Write a JSON artifact, embedding provenance under its own key."""
    if provenance is not None:
        doc = dict(doc)
        doc["provenance"] = provenance
    atomic_write_text(path, canonical_json(doc))


def provenance_comment(provenance: dict) -> str:
    parts = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))
    return f"# {parts}\n"


def write_table(path, render, provenance: dict | None = None) -> None:
    """Write a text table atomically; ``render(fh)`` emits the body.

    A ``# key=value ...`` provenance comment line is prepended; loaders skip
    leading comment lines.
    """
    buf = io.StringIO()
    if provenance is not None:
        buf.write(provenance_comment(provenance))
    render(buf)
    atomic_write_text(path, buf.getvalue())


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def skip_leading_comments(fh):
    """Iterate lines of an open text file, dropping leading '#' lines."""
    it = iter(fh)
    for line in it:
        if line.startswith("#"):
            continue
        yield line
        break
    yield from it
