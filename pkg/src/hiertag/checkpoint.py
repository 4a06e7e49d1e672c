"""Binary model checkpoints.

Layout: 8-byte magic ``SFINCKPT``, little-endian u32 format version,
little-endian u32 header length, UTF-8 JSON header (dimension record plus an
ordered name/shape table), then each parameter as raw little-endian float32
in table order.  Parameters live on the float32 grid in memory, so the round
trip is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import atomic_write_bytes
from .model import ModelDims, build_model, model_from_paramset
from .numerics import ParamSet

MAGIC = b"SFINCKPT"
VERSION = 1

# corrupt headers must not trigger huge allocations
_MAX_VOCAB = 1 << 20
_MAX_HIDDEN = 4096


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class HeaderError(CheckpointError):
    """Header JSON malformed or inconsistent with the dimension record."""


def save_checkpoint(model, path):
    """Atomic write; the table lists parameters in lexicographic name order."""
    table = [[name, list(t.data.shape)] for name, t in model.params.items()]
    header = json.dumps({"dims": model.dims.to_dict(), "params": table}).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for _, t in model.params.items():
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def _parse_header(blob):
    try:
        header = json.loads(blob.decode("utf-8"))
        dims_dict = header["dims"]
        table = header["params"]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise HeaderError(f"unreadable header: {e}") from e
    try:
        dims = ModelDims.from_dict(dims_dict)
    except TypeError as e:
        raise HeaderError(f"bad dimension record: {e}") from e
    for name, bound in (("vocab_size", _MAX_VOCAB), ("embed_dim", _MAX_HIDDEN),
                        ("word_hidden", _MAX_HIDDEN), ("sent_hidden", _MAX_HIDDEN),
                        ("controller_hidden", _MAX_HIDDEN), ("head_hidden", _MAX_HIDDEN)):
        v = getattr(dims, name)
        if not isinstance(v, int) or not 1 <= v <= bound:
            raise HeaderError(f"dimension {name} out of range: {v!r}")
    if not isinstance(table, list) or not all(
        isinstance(e, list) and len(e) == 2 and isinstance(e[0], str) for e in table
    ):
        raise HeaderError("malformed parameter table")
    return dims, table


def load_checkpoint(path):
    """Read and validate a checkpoint; returns the reconstructed model.

    Raises BadMagicError, VersionError, TruncatedError or HeaderError; on any
    failure nothing is retained.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise TruncatedError(f"file is {len(blob)} bytes, shorter than the magic")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:len(MAGIC)]!r}")
    if len(blob) < len(MAGIC) + 8:
        raise TruncatedError("file ends inside the fixed header")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"format version {version}, expected {VERSION}")
    body = len(MAGIC) + 8
    if len(blob) < body + header_len:
        raise TruncatedError("file ends inside the JSON header")
    dims, table = _parse_header(blob[body : body + header_len])

    expected = {name: t.data.shape for name, t in build_model(dims, seed=0).params.items()}
    seen = []
    for name, shape in table:
        if name not in expected:
            raise HeaderError(f"unknown parameter {name!r} in table")
        if tuple(shape) != expected[name]:
            raise HeaderError(
                f"shape mismatch for {name!r}: header {tuple(shape)}, dims imply {expected[name]}"
            )
        seen.append(name)
    if len(seen) != len(set(seen)):
        raise HeaderError("duplicate parameter in table")
    missing = sorted(set(expected) - set(seen))
    if missing:
        raise HeaderError(f"table is missing parameters: {', '.join(missing)}")

    offset = body + header_len
    ps = ParamSet()
    for name, shape in table:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * count
        if len(blob) < offset + nbytes:
            raise TruncatedError(f"payload ends inside parameter {name!r}")
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        ps.add(name, flat.astype(np.float64).reshape(shape))
        offset += nbytes
    if offset != len(blob):
        raise HeaderError(f"{len(blob) - offset} trailing bytes after the payload")
    return model_from_paramset(dims, ps)
