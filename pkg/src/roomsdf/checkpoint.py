"""Checkpoint file: every learnable tensor plus the scene normalization.

Binary little-endian layout (all integers unsigned LE)::

    magic   4 bytes  b"RSDF"
    version u32      currently 1
    cfg_len u32      followed by cfg_len bytes of YAML-encoded ModelConfig
    norm    3 x f64 center, 1 x f64 scale
    count   u32      number of parameter tensors, then per tensor:
        name_len u16, name utf-8 bytes
        ndim u8, ndim x u32 dims
        raw float64 values, C order

Values are always written as 64-bit floats regardless of the training
dtype; loading casts back to the model's configured dtype.
"""

import struct
from dataclasses import asdict

import numpy as np
import yaml

from .color import ColorConfig
from .field import FieldConfig
from .model import ModelConfig, SceneModel

MAGIC = b"RSDF"
VERSION = 1


def save_checkpoint(path, model):
    cfg_yaml = yaml.safe_dump(asdict(model.cfg)).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_yaml)))
        f.write(cfg_yaml)
        f.write(np.asarray(model.norm_center, dtype="<f8").tobytes())
        f.write(struct.pack("<d", model.norm_scale))
        names = model.store.names()
        f.write(struct.pack("<I", len(names)))
        for name in names:
            data = model.store[name].values
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path} is not a roomsdf checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg_dict = yaml.safe_load(f.read(cfg_len).decode())
        cfg = ModelConfig(field=FieldConfig(**cfg_dict.pop("field")),
                          color=ColorConfig(**cfg_dict.pop("color")),
                          **cfg_dict)
        center = np.frombuffer(f.read(24), dtype="<f8").copy()
        (scale,) = struct.unpack("<d", f.read(8))
        model = SceneModel(cfg, seed=0, norm_center=center, norm_scale=scale)
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape)
            if name not in model.store:
                raise ValueError(f"checkpoint parameter '{name}' not in model")
            param = model.store[name]
            if param.shape != tuple(shape):
                raise ValueError(
                    f"shape mismatch for '{name}': checkpoint {shape}, "
                    f"model {param.shape}")
            param.values[...] = data.astype(param.dtype)
    return model
