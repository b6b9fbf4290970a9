"""Versioned binary parameter container.

Layout: magic string, little-endian uint32 format version, uint64 manifest
length, JSON manifest (layer names, kinds, shapes, dilation/stride), then
the raw float64 little-endian parameter values in manifest order (weight
then bias per layer). Writes are atomic via rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Optional

import numpy as np

from .backbone import BackboneParams
from .conv import ConvParams
from .core import AffineParams
from .errors import CheckpointError
from .heads import RefineParams

MAGIC = b"PARTPOOLCKPT"
VERSION = 1


def _layer_entries(backbone: BackboneParams, refine: Optional[RefineParams]):
    entries = []
    names = ["trunk0", "trunk1", "trunk2", "head_cls", "head_loc"]
    for name, conv in zip(names, backbone.all_convs()):
        entries.append((name, {"kind": "conv", "shape": list(conv.kernel.shape),
                               "dilation": conv.dilation, "stride": conv.stride},
                        conv.kernel, conv.bias))
    if refine is not None:
        for name, aff in (("refine1", refine.layer1), ("refine2", refine.layer2)):
            entries.append((name, {"kind": "affine", "shape": list(aff.weight.shape)},
                            aff.weight, aff.bias))
    return entries


def save_checkpoint(path: str, backbone: BackboneParams,
                    refine: Optional[RefineParams] = None) -> None:
    entries = _layer_entries(backbone, refine)
    manifest = {
        "k": backbone.k,
        "classes": backbone.num_classes,
        "in_channels": backbone.in_channels,
        "hidden": backbone.hidden,
        "downsample": backbone.downsample,
        "layers": [{"name": n, **meta} for n, meta, _, _ in entries],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for _, _, weight, bias in entries:
                f.write(weight.astype("<f8").tobytes())
                f.write(bias.astype("<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[BackboneParams, Optional[RefineParams]]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic string")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        try:
            manifest = json.loads(f.read(mlen))
        except ValueError as e:
            raise CheckpointError(f"{path}: bad manifest: {e}") from e

        def read_array(shape):
            n = int(np.prod(shape))
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise CheckpointError(f"{path}: truncated values")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

        layers = {}
        for meta in manifest["layers"]:
            shape = meta["shape"]
            weight = read_array(shape)
            bias = read_array([shape[0]])
            layers[meta["name"]] = (meta, weight, bias)

    try:
        trunk = []
        for name in ("trunk0", "trunk1", "trunk2"):
            meta, w, b = layers[name]
            trunk.append(ConvParams(w, b, dilation=meta["dilation"],
                                    stride=meta["stride"]))
        meta, w, b = layers["head_cls"]
        head_cls = ConvParams(w, b, dilation=meta["dilation"], stride=meta["stride"])
        meta, w, b = layers["head_loc"]
        head_loc = ConvParams(w, b, dilation=meta["dilation"], stride=meta["stride"])
        backbone = BackboneParams(
            k=manifest["k"], num_classes=manifest["classes"],
            in_channels=manifest["in_channels"], hidden=manifest["hidden"],
            downsample=manifest["downsample"], trunk=trunk,
            head_cls=head_cls, head_loc=head_loc)
        refine = None
        if "refine1" in layers:
            _, w1, b1 = layers["refine1"]
            _, w2, b2 = layers["refine2"]
            refine = RefineParams(AffineParams(w1, b1), AffineParams(w2, b2))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed layer set: {e}") from e
    return backbone, refine
