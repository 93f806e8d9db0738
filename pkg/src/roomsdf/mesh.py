"""Zero-level-set extraction via marching cubes, plus binary PLY I/O.

Vertices land on grid edges at the linear zero crossing and are welded by
grid-edge identity, so meshes from both kernel backends are identical and
watertight where the surface is closed. Faces are oriented so triangle
normals point toward positive field values. Triangles that collapse to zero
area (the level set passing exactly through grid nodes) are dropped by
``clean``; remaining vertices are reindexed compactly.
"""

import struct
import warnings
from dataclasses import dataclass, field as dfield

import numpy as np

from . import kernels


@dataclass
class Mesh:
    vertices: np.ndarray                 # (V, 3) float
    faces: np.ndarray                    # (F, 3) int
    colors: np.ndarray | None = dfield(default=None)  # (V, 3) uint8

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def is_empty(self):
        return self.n_faces == 0


def _interpolate_edge_keys(keys, values, origin, spacing, level):
    n = values.shape[0]
    axis = keys // (n ** 3)
    rem = keys % (n ** 3)
    i = rem // (n * n)
    j = (rem // n) % n
    k = rem % n
    v0 = values[i, j, k]
    v1 = values[i + (axis == 0), j + (axis == 1), k + (axis == 2)]
    t = (level - v0) / (v1 - v0)
    pos = np.stack([origin[0] + i * spacing[0],
                    origin[1] + j * spacing[1],
                    origin[2] + k * spacing[2]], axis=1)
    pos[np.arange(len(keys)), axis] += t * spacing[axis]
    return pos


def marching_cubes(values, bounds, level=0.0):
    """Triangulate the ``level`` isosurface of a cubic value grid.

    ``values`` is (n, n, n) sampled on a regular grid spanning ``bounds``
    = (min_corner, max_corner). Returns a :class:`Mesh` oriented toward
    values > level.
    """
    values = np.asarray(values, dtype=np.float64)
    mins = np.asarray(bounds[0], dtype=np.float64)
    maxs = np.asarray(bounds[1], dtype=np.float64)
    n = values.shape[0]
    spacing = (maxs - mins) / (n - 1)
    tri_keys = kernels.mc_triangle_keys(values, level)
    if len(tri_keys) == 0:
        warnings.warn("no zero crossing in the sampled field; mesh is empty")
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    uniq, inv = np.unique(tri_keys.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)
    verts = _interpolate_edge_keys(uniq, values, mins, spacing, level)
    # table winding points toward values < level; flip for outward normals
    faces = faces[:, [0, 2, 1]]
    return clean(Mesh(verts, faces))


def clean(mesh):
    """Drop zero-area/degenerate triangles and unreferenced vertices."""
    if mesh.is_empty():
        return mesh
    f = mesh.faces
    distinct = ((f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2])
                & (f[:, 0] != f[:, 2]))
    tri = mesh.vertices[f]
    area2 = np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    keep = distinct & (area2 > 0.0)
    f = f[keep]
    used = np.unique(f)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    colors = mesh.colors[used] if mesh.colors is not None else None
    return Mesh(mesh.vertices[used], remap[f], colors)


def extract_mesh(sdf_fn, resolution, bounds, level=0.0, chunk=131072):
    """Marching cubes over ``resolution``^3 cells of a signed distance field.

    ``sdf_fn`` maps (P, 3) points to (P,) values and is evaluated in chunks.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    mins = np.asarray(bounds[0], dtype=np.float64)
    maxs = np.asarray(bounds[1], dtype=np.float64)
    n = resolution + 1
    axes = [np.linspace(mins[d], maxs[d], n) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.empty(len(grid))
    for lo in range(0, len(grid), chunk):
        hi = min(lo + chunk, len(grid))
        values[lo:hi] = np.asarray(sdf_fn(grid[lo:hi])).reshape(-1)
    return marching_cubes(values.reshape(n, n, n), (mins, maxs), level)


# ---------------------------------------------------------------------------
# PLY (binary little-endian)
# ---------------------------------------------------------------------------


def write_ply(mesh, path):
    """Binary little-endian PLY; float32 positions, optional uchar colors."""
    has_color = mesh.colors is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {mesh.n_vertices}",
              "property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green",
                   "property uchar blue"]
    header += [f"element face {mesh.n_faces}",
               "property list uchar int vertex_indices", "end_header"]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        verts = np.asarray(mesh.vertices, dtype="<f4")
        if has_color:
            colors = np.asarray(mesh.colors, dtype=np.uint8)
            for v, c in zip(verts, colors):
                f.write(v.tobytes() + c.tobytes())
        else:
            f.write(np.ascontiguousarray(verts).tobytes())
        faces = np.asarray(mesh.faces, dtype="<i4")
        counts = np.full((len(faces), 1), 3, dtype=np.uint8)
        blob = b"".join(c.tobytes() + r.tobytes() for c, r in zip(counts, faces))
        f.write(blob)


def _ply_error(f, message):
    return ValueError(f"malformed PLY at byte {f.tell()}: {message}")


def read_ply(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise _ply_error(f, "missing 'ply' magic")
        if b"binary_little_endian" not in f.readline():
            raise _ply_error(f, "only binary little-endian PLY is supported")
        n_vertex = n_face = 0
        vertex_props = []
        current = None
        while True:
            line = f.readline()
            if not line:
                raise _ply_error(f, "unterminated header")
            parts = line.decode("ascii", "replace").split()
            if not parts:
                continue
            if parts[0] == "comment":
                continue
            if parts[0] == "element":
                current = parts[1]
                if parts[1] == "vertex":
                    n_vertex = int(parts[2])
                elif parts[1] == "face":
                    n_face = int(parts[2])
                else:
                    raise _ply_error(f, f"unsupported element '{parts[1]}'")
            elif parts[0] == "property":
                if current == "vertex":
                    vertex_props.append((parts[1], parts[-1]))
            elif parts[0] == "end_header":
                break
        type_sizes = {"float": ("<f4", 4), "float32": ("<f4", 4),
                      "uchar": ("u1", 1), "uint8": ("u1", 1)}
        offsets = {}
        stride = 0
        for typ, name in vertex_props:
            if typ not in type_sizes:
                raise _ply_error(f, f"unsupported vertex property type '{typ}'")
            offsets[name] = (stride, type_sizes[typ][0])
            stride += type_sizes[typ][1]
        for need in ("x", "y", "z"):
            if need not in offsets:
                raise _ply_error(f, f"missing vertex property '{need}'")
        raw = f.read(n_vertex * stride)
        if len(raw) != n_vertex * stride:
            raise _ply_error(f, "truncated vertex data")
        verts = np.empty((n_vertex, 3), dtype=np.float64)
        for c, name in enumerate(("x", "y", "z")):
            off, dt = offsets[name]
            if n_vertex:
                verts[:, c] = np.ndarray((n_vertex,), dtype=dt, buffer=raw,
                                         offset=off, strides=(stride,))
        colors = None
        if all(k in offsets for k in ("red", "green", "blue")):
            colors = np.empty((n_vertex, 3), dtype=np.uint8)
            for c, name in enumerate(("red", "green", "blue")):
                off, dt = offsets[name]
                colors[:, c] = np.ndarray((n_vertex,), dtype=dt, buffer=raw,
                                          offset=off, strides=(stride,))
        faces = np.empty((n_face, 3), dtype=np.int64)
        for i in range(n_face):
            cnt = f.read(1)
            if len(cnt) != 1:
                raise _ply_error(f, "truncated face data")
            if cnt[0] != 3:
                raise _ply_error(f, f"non-triangle face of size {cnt[0]}")
            data = f.read(12)
            if len(data) != 12:
                raise _ply_error(f, "truncated face indices")
            faces[i] = struct.unpack("<3i", data)
        if n_face and faces.max() >= n_vertex:
            raise _ply_error(f, "face index out of range")
    return Mesh(verts, faces, colors)
