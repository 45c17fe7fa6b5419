"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic      8 bytes  b"I2MCKPT\\0"
    version    u32
    digest     32 bytes sha256 of the canonical model config
    header     u32 length + UTF-8 JSON {config, vocab, meta}
    n_blocks   u32
    blocks     u16 name length, name, u8 dtype code, u8 ndim, u32 dims..., raw data
"""

import json
import struct

import numpy as np

from .config import ModelConfig
from .dataset import Vocab
from .errors import ConfigError

MAGIC = b"I2MCKPT\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_checkpoint(path, model, vocab=None, meta=None):
    cfg = model.cfg
    header = json.dumps({
        "config": cfg.to_dict(),
        "vocab": vocab.itos if vocab is not None else None,
        "meta": meta or {},
    }, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), cfg.digest(),
             struct.pack("<I", len(header)), header, struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        data = np.ascontiguousarray(p.data)
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _CODES[data.dtype], data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.astype(_DTYPES[_CODES[data.dtype]], copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise ValueError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config=None):
    """Read a checkpoint; returns (model, vocab, meta).

    Raises ConfigError when the stored digest disagrees with the stored
    config or with ``expected_config``.
    """
    from .model import Im2MarkupModel
    from . import autodiff as ad

    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = r.take(32)
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode())
    cfg = ModelConfig(**header["config"])
    if cfg.digest() != digest:
        raise ConfigError(f"{path}: stored config does not match its digest")
    if expected_config is not None and expected_config.digest() != digest:
        raise ConfigError(f"{path}: config digest mismatch with the requested model config")
    (n_blocks,) = r.unpack("<I")
    params = {}
    for _ in range(n_blocks):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
        params[name] = ad.Tensor(data.astype(dtype.newbyteorder("="), copy=True),
                                 requires_grad=True, name=name)
    vocab = Vocab(header["vocab"][3:]) if header.get("vocab") else None
    return Im2MarkupModel(cfg, params), vocab, header.get("meta", {})
