"""Binary checkpoint container (``NMFC`` v1), little-endian throughout."""

import os
import struct
import tempfile

import numpy as np

from .model import ARCH_TAGS, ModelParams, expected_shapes

MAGIC = b"NMFC"
VERSION = 1
_TAG_ARCHS = {v: k for k, v in ARCH_TAGS.items()}


class CheckpointError(ValueError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


def encode_checkpoint(model):
    out = [MAGIC, struct.pack("<BBII", VERSION, ARCH_TAGS[model.arch], model.n_classes,
                              len(model.tensors))]
    for name, t in model.tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        out.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(data, expect_arch=None):
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic: not an NMFC checkpoint")
    version, tag, n_classes, count = struct.unpack("<BBII", take(10))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if tag not in _TAG_ARCHS:
        raise CheckpointError(f"unknown architecture tag {tag}")
    arch = _TAG_ARCHS[tag]
    if expect_arch is not None and arch != expect_arch:
        raise ArchitectureMismatchError(f"checkpoint holds {arch}, expected {expect_arch}")

    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last tensor")

    want = expected_shapes(arch, n_classes)
    if list(want) != list(tensors):
        raise CheckpointError(f"tensor names do not match architecture {arch}")
    for name, shape in want.items():
        if tensors[name].shape != shape:
            raise CheckpointError(f"{name}: shape {tensors[name].shape}, expected {shape}")
    return ModelParams(arch, n_classes, tensors)


def save_checkpoint(model, path):
    """Atomically write ``model`` to ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_checkpoint(model))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_arch=None):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expect_arch)
