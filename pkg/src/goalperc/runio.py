"""Output plumbing shared by the commands: atomic writes and seed streams."""

import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def stream(master_seed, *names):
    """Independent generator for a named sub-stream of ``master_seed``.

    ``stream(7, "neuromod", "0.99", 3)`` is stable across runs and unaffected
    by how many draws any other stream made.
    """
    key = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))
