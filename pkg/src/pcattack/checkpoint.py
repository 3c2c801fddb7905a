"""ADVM checkpoint container.

Layout (little-endian)::

    "ADVM"  u16 version=1
    payload:
        u16 len + ascii architecture id, u32 C, u32 H, u32 W, u32 class_count, u64 init_seed
        u32 epochs, f64 train_accuracy, f64 test_accuracy, u8 adversarial, f64 adversarial_epsilon
        u32 layer_count, then per layer: u32 rank, u32 extents..., f32 values
    u32 CRC32 of payload
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from .formats import ChecksumError, FormatError, read_exact, require_magic
from .models import Checkpoint, ModelSpec

MAGIC = b"ADVM"
VERSION = 1


def encode_checkpoint(cp):
    p = bytearray()
    arch = cp.spec.architecture_id.encode("ascii")
    p += struct.pack("<H", len(arch)) + arch
    p += struct.pack("<IIIIQ", *cp.spec.input_shape, cp.spec.class_count, cp.spec.init_seed)
    p += struct.pack("<IddBd", cp.epochs, cp.train_accuracy, cp.test_accuracy, cp.adversarial, cp.adversarial_epsilon)
    p += struct.pack("<I", len(cp.weights))
    for w in cp.weights:
        w32 = w.astype("<f4")
        if not np.array_equal(w32.astype(np.float64), w):
            raise FormatError("weights are not float32-representable; round them before saving")
        p += struct.pack(f"<I{w.ndim}I", w.ndim, *w.shape)
        p += w32.tobytes()
    return MAGIC + struct.pack("<H", VERSION) + bytes(p) + struct.pack("<I", zlib.crc32(p))


def decode_checkpoint(raw):
    buf = memoryview(raw)
    require_magic(buf, MAGIC, VERSION)
    pos = 6

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        vals = struct.unpack(fmt, read_exact(buf, pos, size))
        pos += size
        return vals

    (n,) = take("<H")
    arch = bytes(read_exact(buf, pos, n)).decode("ascii")
    pos += n
    c, h, w, classes, seed = take("<IIIIQ")
    epochs, train_acc, test_acc, adv, adv_eps = take("<IddBd")
    (layers,) = take("<I")
    weights = []
    for _ in range(layers):
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        count = int(np.prod(shape))
        arr = np.frombuffer(read_exact(buf, pos, 4 * count), dtype="<f4")
        pos += 4 * count
        weights.append(arr.astype(np.float64).reshape(shape))
    payload_end = pos
    (crc,) = take("<I")
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after checksum")
    if zlib.crc32(buf[6:payload_end]) != crc:
        raise ChecksumError("checkpoint payload checksum mismatch")
    spec = ModelSpec(arch, (c, h, w), classes, seed)
    return Checkpoint(spec, weights, epochs, train_acc, test_acc, bool(adv), adv_eps)


def save_checkpoint(cp, path):
    Path(path).write_bytes(encode_checkpoint(cp))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
