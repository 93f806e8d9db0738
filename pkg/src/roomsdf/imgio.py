"""Image file I/O: 8/16-bit PNG via Pillow, 32-bit float PFM.

PFM files follow the standard layout: ``PF``/``Pf`` header, width height,
negative scale for little-endian, rows stored bottom-to-top. Normal maps are
3-channel PFM holding camera-space unit normals (+x right, +y down, +z into
the scene); uncertainty and depth maps are 1-channel PFM.
"""

import numpy as np
from PIL import Image

DEPTH_PNG_SCALE = 1.0 / 10000.0  # 16-bit depth PNG stores round(depth / scale)


def save_png(path, img):
    """Float image in [0, 1] (H, W) or (H, W, 3) -> 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def load_png(path):
    """8-bit PNG -> float image in [0, 1]; RGBA drops alpha."""
    img = np.asarray(Image.open(path))
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, :3]
    return img.astype(np.float64) / 255.0


def save_depth_png(path, depth):
    """Depth (scene units) -> 16-bit PNG at DEPTH_PNG_SCALE units/step."""
    q = np.round(np.asarray(depth) / DEPTH_PNG_SCALE)
    data = np.clip(q, 0, 65535).astype(np.uint16)
    Image.fromarray(data, mode="I;16").save(path)


def load_depth_png(path):
    img = np.asarray(Image.open(path)).astype(np.float64)
    return img * DEPTH_PNG_SCALE


def save_pfm(path, data):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # little-endian
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def load_pfm(path):
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: {path}")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.ascontiguousarray(data.reshape(shape)[::-1]).astype(np.float64)
