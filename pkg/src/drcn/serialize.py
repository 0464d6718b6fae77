"""Binary tensor container used inside checkpoints.

Layout (little-endian)::

    b"DRCN" | version u32 | count u32
    per tensor: name_len u32 | name utf-8 | rank u32 | dims u64 * rank
                | dtype u8 (0=f64, 1=f32) | raw data
"""

import struct

import numpy as np

MAGIC = b"DRCN"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class FormatError(ValueError):
    pass


def dump_tensors(named):
    """Serialize an ordered ``{name: ndarray}`` mapping to bytes."""
    out = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, arr in named.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        tag = _TAGS[arr.dtype]
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(struct.pack("<B", tag))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(out)


def load_tensors(buf):
    """Inverse of :func:`dump_tensors`; returns ``{name: ndarray}`` in file order."""
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise FormatError("bad magic; not a DRCN tensor blob")
    try:
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise FormatError(f"unsupported format version {version}")
        pos = 12
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + n]).decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            (tag,) = struct.unpack_from("<B", view, pos)
            pos += 1
            if tag not in _DTYPES:
                raise FormatError(f"tensor {name!r}: unknown dtype tag {tag}")
            dt = _DTYPES[tag]
            size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + size > len(view):
                raise FormatError(f"tensor {name!r}: truncated data")
            arr = np.frombuffer(view[pos:pos + size], dtype=dt).reshape(dims)
            tensors[name] = arr.astype(dt.newbyteorder("="))
            pos += size
    except struct.error as exc:
        raise FormatError(f"truncated tensor blob: {exc}") from None
    if pos != len(view):
        raise FormatError("trailing bytes after tensor blob")
    return tensors
