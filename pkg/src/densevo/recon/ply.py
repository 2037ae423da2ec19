"""PLY mesh output (binary little-endian, or ASCII for debugging) and a reader for it."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError, LoadError
from .mesh import TriangleMesh

_FACE = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])


def _header(mesh: TriangleMesh, fmt: str) -> str:
    lines = ["ply", f"format {fmt} 1.0", "comment densevo mesh", f"element vertex {mesh.n_vertices}",
             "property double x", "property double y", "property double z"]
    if mesh.normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
    lines += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    return "\n".join(lines) + "\n"


def export_ply(mesh: TriangleMesh, path, *, ascii: bool = False) -> None:
    """Write ``mesh`` as PLY; vertices as doubles, faces as int triples."""
    mesh.validate()
    path = Path(path)
    cols = [mesh.vertices] if mesh.normals is None else [mesh.vertices, mesh.normals]
    vdata = np.hstack(cols).astype("<f8")
    try:
        if ascii:
            with open(path, "w", encoding="ascii") as fh:
                fh.write(_header(mesh, "ascii"))
                for row in vdata:
                    fh.write(" ".join(repr(float(x)) for x in row) + "\n")
                for f in mesh.faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
        else:
            faces = np.empty(mesh.n_faces, dtype=_FACE)
            faces["n"] = 3
            faces["idx"] = mesh.faces
            with open(path, "wb") as fh:
                fh.write(_header(mesh, "binary_little_endian").encode("ascii"))
                fh.write(vdata.tobytes())
                fh.write(faces.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PLY {path}: {exc}") from exc


def read_ply(path) -> TriangleMesh:
    """Parse a PLY written by :func:`export_ply` (either encoding)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read PLY {path}: {exc}") from exc
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len("end_header\n"):]
    fmt = None
    counts: dict = {}
    vprops: list = []
    current = None
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            current = tok[1]
            counts[current] = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            vprops.append(tok[-1])
    if fmt not in ("ascii", "binary_little_endian") or "vertex" not in counts or "face" not in counts:
        raise FormatError(f"{path}: unsupported PLY layout")
    nv, nf, nc = counts["vertex"], counts["face"], len(vprops)
    if fmt == "ascii":
        rows = body.decode("ascii").split("\n")
        vdata = np.array([[float(x) for x in r.split()] for r in rows[:nv]]).reshape(nv, nc)
        fdata = np.array([[int(x) for x in r.split()] for r in rows[nv:nv + nf]], dtype=np.int64).reshape(nf, 4)
        faces = fdata[:, 1:]
    else:
        vbytes = nv * nc * 8
        vdata = np.frombuffer(body[:vbytes], dtype="<f8").reshape(nv, nc)
        faces = np.frombuffer(body[vbytes:vbytes + nf * _FACE.itemsize], dtype=_FACE)["idx"].astype(np.int64)
    normals = vdata[:, 3:6].copy() if nc >= 6 else None
    return TriangleMesh(vdata[:, :3].copy(), faces.reshape(-1, 3), normals)
