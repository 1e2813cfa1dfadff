"""Binary persistence for networks and embedding sets.

One self-describing flat file: a magic string "CLCNN1", a header listing
layer kinds and dimensions, the weight/bias payloads as little-endian
float64 blocks in layer order, then a count of appended embedding blocks
(possibly zero), each typed by kind with its own dims and payloads.
Round trips are bit-exact: all floats are stored as raw IEEE-754 bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .embedding import AutoencoderEmbedding, EmbeddingSet, PcaEmbedding, _Dense
from .network import ACTIVATIONS, KINDS, LayerSpec, LayeredNetwork

MAGIC = b"CLCNN1"

_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
_ACT_CODE = {a: i for i, a in enumerate(ACTIVATIONS)}
_AE_ACT_CODE = {"identity": 0, "elu": 2}


def _write_floats(fh, a: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_floats(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ShapeError("model file truncated inside a float block")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _unpack(fh, fmt: str):
    size = struct.calcsize(fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise ShapeError("model file truncated inside the header")
    return struct.unpack(fmt, raw)


def _write_pca(fh, e: PcaEmbedding) -> None:
    d, r = e.basis.shape
    fh.write(struct.pack("<BIIIBd", 0, e.layer_index, d, r,
                         0 if e.mean is None else 1, e.retained_ratio))
    _write_floats(fh, e.basis)
    if e.mean is not None:
        _write_floats(fh, e.mean)


def _read_pca(fh) -> PcaEmbedding:
    layer_index, d, r, has_mean, ratio = _unpack(fh, "<IIIBd")
    basis = _read_floats(fh, (d, r))
    mean = _read_floats(fh, (d,)) if has_mean else None
    return PcaEmbedding(basis=basis, mean=mean, retained_ratio=ratio,
                        layer_index=layer_index)


def _write_ae(fh, e: AutoencoderEmbedding) -> None:
    fh.write(struct.pack("<BIBB", 1, e.layer_index, len(e.encoder), len(e.decoder)))
    for layer in e.encoder + e.decoder:
        out_d, in_d = layer.weight.shape
        fh.write(struct.pack("<IIB", in_d, out_d, _AE_ACT_CODE[layer.activation]))
        _write_floats(fh, layer.weight)
        _write_floats(fh, layer.bias)


def _read_ae(fh) -> AutoencoderEmbedding:
    layer_index, n_enc, n_dec = _unpack(fh, "<IBB")
    act_names = {v: k for k, v in _AE_ACT_CODE.items()}
    layers = []
    for _ in range(n_enc + n_dec):
        in_d, out_d, act = _unpack(fh, "<IIB")
        w = _read_floats(fh, (out_d, in_d))
        b = _read_floats(fh, (out_d,))
        layers.append(_Dense(weight=w, bias=b, activation=act_names[act]))
    return AutoencoderEmbedding(encoder=layers[:n_enc], decoder=layers[n_enc:],
                                layer_index=layer_index)


def save_model(path, net: LayeredNetwork, embeddings: EmbeddingSet | None = None) -> None:
    """Write network (and optionally its embedding set) to one binary file."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", net.T))
        for layer in net.layers:
            fh.write(struct.pack("<BBII", _KIND_CODE[layer.kind],
                                 _ACT_CODE[layer.activation],
                                 layer.in_dim, layer.out_dim))
        for layer in net.layers:
            _write_floats(fh, layer.weight)
            _write_floats(fh, layer.bias)
        blocks = list(embeddings) if embeddings is not None else []
        fh.write(struct.pack("<I", len(blocks)))
        for e in blocks:
            if isinstance(e, PcaEmbedding):
                _write_pca(fh, e)
            elif isinstance(e, AutoencoderEmbedding):
                _write_ae(fh, e)
            else:
                raise ConfigError(f"cannot persist embedding type {type(e).__name__}")


def load_model(path) -> tuple[LayeredNetwork, EmbeddingSet | None]:
    """Read a model file back; returns (network, embeddings or None)."""
    path = Path(path)
    kinds = {v: k for k, v in _KIND_CODE.items()}
    acts = {v: k for k, v in _ACT_CODE.items()}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path} is not a model file (bad magic)")
        (t_count,) = _unpack(fh, "<I")
        header = [_unpack(fh, "<BBII") for _ in range(t_count)]
        layers = []
        for kind, act, in_d, out_d in header:
            w = _read_floats(fh, (out_d, in_d))
            b = _read_floats(fh, (out_d,))
            layers.append(LayerSpec(kind=kinds[kind], weight=w, bias=b,
                                    activation=acts[act]))
        net = LayeredNetwork(layers)
        (n_blocks,) = _unpack(fh, "<I")
        if n_blocks == 0:
            return net, None
        embeddings = []
        for _ in range(n_blocks):
            (block_kind,) = _unpack(fh, "<B")
            if block_kind == 0:
                embeddings.append(_read_pca(fh))
            elif block_kind == 1:
                embeddings.append(_read_ae(fh))
            else:
                raise ConfigError(f"unknown embedding block kind {block_kind}")
        return net, EmbeddingSet(embeddings)
