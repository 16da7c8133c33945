"""Binary checkpoints.

Layout (integers little-endian)::

    b"GFO1" | u16 version | u32 len | config text (UTF-8)
    repeated: u32 len | name (UTF-8) | u8 rank | u32 dims[rank] | f64 payload
    u32 CRC32 of every preceding byte
"""

import struct
import zlib

import numpy as np

MAGIC = b"GFO1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(config_text, params):
    cfg = config_text.encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg]
    for name in params:
        arr = np.asarray(params[name], dtype="<f8", order="C")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)) + nb)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob):
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("CRC mismatch")
    version, n = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = 10
    config_text = body[pos:pos + n].decode("utf-8")
    pos += n
    params = {}
    try:
        while pos < len(body):
            (ln,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4:pos + 4 + ln].decode("utf-8")
            pos += 4 + ln
            (rank,) = struct.unpack_from("<B", body, pos)
            dims = struct.unpack_from(f"<{rank}I", body, pos + 1)
            pos += 1 + 4 * rank
            size = int(np.prod(dims)) * 8
            if pos + size > len(body):
                raise CheckpointError(f"section {name!r} is truncated")
            params[name] = np.frombuffer(body, dtype="<f8", count=size // 8,
                                         offset=pos).reshape(dims).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"malformed section: {exc}") from None
    return config_text, params


def save(path, config_text, params):
    with open(path, "wb") as f:
        f.write(encode(config_text, params))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
