"""Binary encoder checkpoints.

Layout (little-endian): ``b"AREP"``, u16 version, u32 d, u32 L, u32 vocab
size, the embedding table, then per layer the d*d adapter matrix and its
d-vector bias, all as float32; finally the vocabulary as u32
length-prefixed UTF-8 strings in id order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .model import EncoderParams
from .vocab import Vocabulary

MAGIC = b"AREP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Union[str, Path], params: EncoderParams, vocab: Vocabulary) -> None:
    if params.embedding.shape[0] != len(vocab):
        raise CheckpointError("embedding rows do not match the vocabulary")
    f32 = np.dtype("<f4")
    parts = [MAGIC, struct.pack("<HIII", VERSION, params.d, params.n_layers, len(vocab)),
             params.embedding.astype(f32).tobytes()]
    for w, b in zip(params.weights, params.biases):
        parts += [w.astype(f32).tobytes(), b.astype(f32).tobytes()]
    for tok in vocab.itos:
        raw = tok.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Union[str, Path]) -> tuple[EncoderParams, Vocabulary]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic")
    if len(data) < 18:
        raise CheckpointError("truncated payload")
    version, d, n_layers, n_vocab = struct.unpack_from("<HIII", data, 4)
    if version != VERSION:
        raise CheckpointError(f"version mismatch: file has {version}, expected {VERSION}")
    off = 18

    def floats(n: int) -> np.ndarray:
        nonlocal off
        end = off + 4 * n
        if end > len(data):
            raise CheckpointError("truncated payload")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
        off = end
        return arr

    emb = floats(n_vocab * d).reshape(n_vocab, d)
    weights, biases = [], []
    for _ in range(n_layers):
        weights.append(floats(d * d).reshape(d, d))
        biases.append(floats(d))
    itos = []
    for _ in range(n_vocab):
        if off + 4 > len(data):
            raise CheckpointError("truncated payload")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + n > len(data):
            raise CheckpointError("truncated payload")
        itos.append(data[off:off + n].decode("utf-8"))
        off += n
    return EncoderParams(emb, weights, biases, dropout_rate=0.0), Vocabulary(tuple(itos))
