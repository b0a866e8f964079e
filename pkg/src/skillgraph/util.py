"""Small shared helpers: canonical JSON, file hashing, logging setup."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path


def get_logger(name: str) -> logging.Logger:
    """Module logger honoring the SKILLGRAPH_LOG environment variable."""
    logger = logging.getLogger(name)
    level = os.environ.get("SKILLGRAPH_LOG", "").upper()
    if level and not logger.handlers:
        logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
        logger.setLevel(level)
    return logger


def canonical_json_dumps(obj) -> str:
    """Key-sorted, 2-space-indented JSON with a trailing newline.

    Serializing the same value always yields the same bytes, which is what
    the byte-identical output guarantees rest on.
    """
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path | str, obj) -> None:
    Path(path).write_text(canonical_json_dumps(obj), encoding="utf-8")


def read_json(path: Path | str):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_path(path: Path | str) -> str:
    """Hash a file, or a directory as the hash of its sorted member hashes."""
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for member in sorted(q for q in p.rglob("*") if q.is_file()):
            h.update(member.relative_to(p).as_posix().encode("utf-8"))
            h.update(b":")
            h.update(sha256_file(member).encode("ascii"))
            h.update(b"\n")
        return h.hexdigest()
    return sha256_file(p)
