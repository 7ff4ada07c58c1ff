"""Readers and writers: XYZ/PLY clouds, distance matrices, checkpoints, embeddings, OBJ."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geodesic import GeodesicMatrix
from .geometry import PointCloud
from .meshing import TriangleMesh
from .network import MappingNetwork

DM_MAGIC = b"GHOF-DM1"
NN_MAGIC = b"GHOF-NN1"


class FormatError(ValueError):
    pass


def _fmt(x):
    return repr(float(x))


# --- point clouds ---------------------------------------------------------


def write_xyz(path, cloud: PointCloud, extra=None):
    """One point per line: ``x y z [nx ny nz] [label]``.

    ``extra`` replaces the label column (e.g. chart ids).
    """
    col = cloud.labels if extra is None else np.asarray(extra, dtype=np.int64)
    cols = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.normals is not None else [])
    cols += ["label"] if col is not None else []
    lines = ["# " + " ".join(cols)]
    for r in range(len(cloud)):
        vals = [_fmt(v) for v in cloud.points[r]]
        if cloud.normals is not None:
            vals += [_fmt(v) for v in cloud.normals[r]]
        if col is not None:
            vals.append(str(int(col[r])))
        lines.append(" ".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_xyz(path) -> PointCloud:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    width = len(rows[0])
    if any(len(r) != width for r in rows) or width not in (3, 4, 6, 7):
        raise FormatError(f"{path}: expected 3, 4, 6 or 7 columns per line")
    data = np.array(rows, dtype=object)
    pts = data[:, :3].astype(float)
    normals = data[:, 3:6].astype(float) if width >= 6 else None
    labels = data[:, -1].astype(np.int64) if width in (4, 7) else None
    return PointCloud(pts, normals, labels)


def write_ply(path, cloud: PointCloud, chart=None):
    """Binary little-endian PLY with float32 x,y,z, optional normals, ``label`` and ``chart``."""
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if cloud.labels is not None:
        fields.append(("label", "<i4"))
    if chart is not None:
        fields.append(("chart", "<i4"))
    rec = np.zeros(len(cloud), dtype=fields)
    for a, name in enumerate("xyz"):
        rec[name] = cloud.points[:, a]
    if cloud.normals is not None:
        for a, name in enumerate(("nx", "ny", "nz")):
            rec[name] = cloud.normals[:, a]
    if cloud.labels is not None:
        rec["label"] = cloud.labels
    if chart is not None:
        rec["chart"] = np.asarray(chart)
    ply_type = {"<f4": "float", "<i4": "int"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {ply_type[t]} {name}" for name, t in fields]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path, return_chart=False):
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    types = {"float": "<f4", "float32": "<f4", "int": "<i4", "int32": "<i4",
             "double": "<f8", "uchar": "u1", "uint8": "u1"}
    n, fields, in_vertex = 0, [], False
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n, in_vertex = int(parts[2]), True
        elif parts and parts[0] == "element":
            in_vertex = False
        elif parts and parts[0] == "property" and in_vertex:
            if parts[1] not in types:
                raise FormatError(f"{path}: unsupported property type {parts[1]}")
            fields.append((parts[2], types[parts[1]]))
    rec = np.frombuffer(raw, dtype=fields, count=n, offset=end + len(b"end_header\n"))
    names = rec.dtype.names
    pts = np.column_stack([rec[c].astype(float) for c in "xyz"])
    normals = None
    if {"nx", "ny", "nz"} <= set(names):
        normals = np.column_stack([rec[c].astype(float) for c in ("nx", "ny", "nz")])
        # float32 storage; renormalize to keep the unit-length invariant
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    labels = rec["label"].astype(np.int64) if "label" in names else None
    cloud = PointCloud(pts, normals, labels)
    if return_chart:
        return cloud, (rec["chart"].astype(np.int64) if "chart" in names else None)
    return cloud


def read_cloud(path) -> PointCloud:
    return read_ply(path) if str(path).lower().endswith(".ply") else read_xyz(path)


def write_cloud(path, cloud, chart=None):
    if str(path).lower().endswith(".ply"):
        write_ply(path, cloud, chart)
    else:
        write_xyz(path, cloud, chart)


# --- distance matrices ----------------------------------------------------


def write_distance_matrix(path, D: GeodesicMatrix):
    d = np.ascontiguousarray(D.distances, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(DM_MAGIC)
        fh.write(struct.pack("<Q", len(d)))
        fh.write(d.tobytes())


def read_distance_matrix(path) -> GeodesicMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != DM_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {DM_MAGIC!r}")
    (n,) = struct.unpack("<Q", raw[8:16])
    if len(raw) != 16 + 4 * n * n:
        raise FormatError(f"{path}: size does not match n={n}")
    d = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, n).astype(float)
    try:
        return GeodesicMatrix(d).check(sym_tol=1e-5, diag_tol=1e-6)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- network checkpoints --------------------------------------------------


def write_checkpoint(path, net: MappingNetwork, sidecar: dict | None = None):
    """Binary parameters plus an optional JSON sidecar at ``<path>.json``."""
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(NN_MAGIC)
        fh.write(struct.pack("<I", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(net.get_flat().astype("<f4").tobytes())
    if sidecar is not None:
        meta = {"activation": net.activation, **sidecar}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_checkpoint(path) -> MappingNetwork:
    raw = Path(path).read_bytes()
    if raw[:8] != NN_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {NN_MAGIC!r}")
    (count,) = struct.unpack("<I", raw[8:12])
    sizes = struct.unpack(f"<{count}I", raw[12 : 12 + 4 * count])
    net = MappingNetwork.zeros(sizes)
    flat = np.frombuffer(raw, dtype="<f4", offset=12 + 4 * count)
    if flat.size != net.n_params:
        raise FormatError(f"{path}: expected {net.n_params} parameters, found {flat.size}")
    return net.set_flat(flat.astype(float))


def quantize(net: MappingNetwork) -> MappingNetwork:
    """Round parameters to float32, the checkpoint precision."""
    return net.copy().set_flat(net.get_flat().astype(np.float32).astype(float))


# --- embeddings and meshes ------------------------------------------------


def write_embedding(path, rows):
    rows = np.asarray(rows, dtype=float)
    k = rows.shape[1] - 3
    header = "# x y z " + " ".join(f"w_{i + 1}" for i in range(k))
    body = "\n".join(" ".join(_fmt(v) for v in r) for r in rows)
    Path(path).write_text(header + "\n" + body + "\n")


def read_embedding(path) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=2)


def write_obj(path, mesh: TriangleMesh):
    """Wavefront OBJ; faces grouped per chart under ``usemtl chart_<id>``."""
    lines = [f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}" for v in mesh.vertices]
    order = np.argsort(mesh.face_chart, kind="stable")
    current = None
    for f in order:
        cid = int(mesh.face_chart[f])
        if cid != current:
            lines.append(f"usemtl chart_{cid}")
            current = cid
        a, b, c = mesh.faces[f] + 1
        lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces, charts = [], [], []
    cid = 0
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 3:
                raise FormatError(f"{path}: only triangular faces are supported")
            faces.append([i - 1 for i in idx])
            charts.append(cid)
        elif parts[0] == "usemtl" and parts[1].startswith("chart_"):
            cid = int(parts[1][len("chart_"):])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces).reshape(-1, 3), np.array(charts))
