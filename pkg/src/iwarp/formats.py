"""File formats: PLY clouds, OBJ meshes, the model container and JSON specs.

Point clouds are PLY files with float32 ``x y z`` vertex properties, in
ASCII or binary little-endian encoding. Meshes are triangle-only OBJ files.
A warp model is a single binary file::

    b"IWARPMDL" | uint64 header length | UTF-8 JSON header | float64/int64 arrays

with array shapes and byte offsets (relative to the end of the header)
listed in the header. Specs and estimates are JSON with explicit units.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError, InputError
from .geometry import RigidTransform, matrix_to_quaternion, quaternion_to_matrix
from .interaction import GraspSpec, PlacementSpec
from .mesh import TriMesh
from .validation import check_points
from .warp import CanonicalObject, ShapeParams, WarpSpace

MODEL_MAGIC = b"IWARPMDL"
MODEL_VERSION = 1
SPEC_VERSION = 1
UNITS = {"length": "meters", "angle": "radians"}
QUATERNION_TOL = 1e-9

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# ----------------------------------------------------------------------------
# PLY


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise FormatError(f"{path}: not a PLY file")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"{path}: PLY header is not terminated")
        words = line.decode("ascii", "replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            fmt = words[1]
        elif words[0] == "element":
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element")
            if words[1] == "list":
                elements[-1][2].append((words[4], _ply_type(words[2], path), _ply_type(words[3], path)))
            else:
                elements[-1][2].append((words[2], _ply_type(words[1], path), None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def _ply_type(name, path):
    if name not in _PLY_TYPES:
        raise FormatError(f"{path}: unknown PLY type {name!r}")
    return _PLY_TYPES[name]


def _read_binary_element(buf, pos, count, props, endian):
    if all(p[2] is None for p in props):
        dtype = np.dtype([(name, endian + t) for name, t, _ in props])
        data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        return {name: data[name] for name, _, _ in props}, pos + count * dtype.itemsize
    out = {name: [] for name, _, _ in props}
    for _ in range(count):
        for name, t, item in props:
            if item is None:
                dt = np.dtype(endian + t)
                out[name].append(np.frombuffer(buf, dt, 1, pos)[0])
                pos += dt.itemsize
            else:
                ct = np.dtype(endian + t)
                n = int(np.frombuffer(buf, ct, 1, pos)[0])
                pos += ct.itemsize
                it = np.dtype(endian + item)
                out[name].append(np.frombuffer(buf, it, n, pos))
                pos += n * it.itemsize
    return out, pos


def _read_ascii_element(tokens, pos, count, props):
    out = {name: [] for name, _, _ in props}
    for _ in range(count):
        for name, t, item in props:
            if item is None:
                out[name].append(float(tokens[pos]))
                pos += 1
            else:
                n = int(tokens[pos])
                out[name].append(np.array(tokens[pos + 1 : pos + 1 + n], dtype=np.float64).astype(item))
                pos += 1 + n
    return out, pos


def read_ply(path):
    """Vertices ``(n, 3)`` and faces ``(f, 3)`` (possibly empty) of a PLY file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            fmt, elements = _parse_ply_header(fh, path)
            body = fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    data = {}
    try:
        if fmt == "ascii":
            tokens = body.split()
            pos = 0
            for name, count, props in elements:
                data[name], pos = _read_ascii_element(tokens, pos, count, props)
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            pos = 0
            for name, count, props in elements:
                data[name], pos = _read_binary_element(body, pos, count, props, endian)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: truncated or malformed PLY body") from exc
    vertex = data.get("vertex")
    if vertex is None or not all(k in vertex for k in "xyz"):
        raise FormatError(f"{path}: PLY has no vertex x/y/z properties")
    points = np.stack([np.asarray(vertex[k], dtype=np.float64) for k in "xyz"], axis=1).reshape(-1, 3)
    faces = np.zeros((0, 3), dtype=np.int64)
    face = data.get("face")
    if face:
        lists = face.get("vertex_indices", face.get("vertex_index"))
        if lists is not None and len(lists):
            if any(len(f) != 3 for f in lists):
                raise FormatError(f"{path}: only triangular faces are supported")
            faces = np.asarray([np.asarray(f, dtype=np.int64) for f in lists]).reshape(-1, 3)
    return points, faces


def read_cloud(path):
    points, _ = read_ply(path)
    return check_points(points, str(path), allow_empty=True)


def write_ply(path, points, binary=True):
    """Write a cloud with float32 ``x y z`` properties."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    data = points.astype("<f4")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(data.tobytes())
        else:
            for x, y, z in data.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n".encode("ascii"))


# ----------------------------------------------------------------------------
# OBJ


def write_obj(path, mesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_obj(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    vertices, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        words = line.split()
        if not words:
            continue
        try:
            if words[0] == "v":
                vertices.append([float(w) for w in words[1:4]])
            elif words[0] == "f":
                if len(words) != 4:
                    raise FormatError(f"{path}:{lineno}: only triangular faces are supported")
                idx = [int(w.split("/")[0]) for w in words[1:]]
                faces.append([i - 1 if i > 0 else len(vertices) + i for i in idx])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    if not vertices or not faces:
        raise FormatError(f"{path}: mesh has no vertices or faces")
    try:
        return TriMesh(np.array(vertices), np.array(faces))
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def read_mesh(path):
    """Triangle mesh from an OBJ or PLY file."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        vertices, faces = read_ply(path)
        if not len(faces):
            raise FormatError(f"{path}: PLY file has no faces")
        try:
            return TriMesh(vertices, faces)
        except InputError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return read_obj(path)


# ----------------------------------------------------------------------------
# model container


def _json_dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def save_model(path, space, category=""):
    arrays = {
        "canonical_points": space.canonical.points.astype("<f8"),
        "faces": space.canonical.faces.astype("<i8"),
        "basis": space.basis.astype("<f8"),
        "mean": space.mean.astype("<f8"),
    }
    if space.singular_values is not None:
        arrays["singular_values"] = space.singular_values.astype("<f8")
    table, offset = {}, 0
    for name, arr in arrays.items():
        table[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes}
        offset += arr.nbytes
    header = {
        "format_version": MODEL_VERSION,
        "category": category,
        "latent_dim": space.latent_dim,
        "vertex_count": space.canonical.vertex_count,
        "meta": space.meta,
        "arrays": table,
    }
    blob = _json_dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_model(path):
    """Return ``(WarpSpace, category)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    if raw[:8] != MODEL_MAGIC or len(raw) < 16:
        raise FormatError(f"{path}: not a warp model file")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt model header") from exc
    if header.get("format_version") != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {header.get('format_version')!r}")
    base = 16 + n
    arrays = {}
    for name, info in header["arrays"].items():
        start = base + info["offset"]
        if start + info["nbytes"] > len(raw):
            raise FormatError(f"{path}: array {name!r} is truncated")
        arrays[name] = np.frombuffer(raw, info["dtype"], info["nbytes"] // np.dtype(info["dtype"]).itemsize, start)
        arrays[name] = arrays[name].reshape(info["shape"]).astype(np.dtype(info["dtype"]).newbyteorder("="))
    canonical = CanonicalObject(arrays["canonical_points"], header["vertex_count"], arrays["faces"])
    space = WarpSpace(canonical, arrays["basis"], arrays["mean"], arrays.get("singular_values"), header["meta"])
    return space, header["category"]


# ----------------------------------------------------------------------------
# JSON specs


def transform_to_json(T):
    return {"R": T.R.reshape(-1).tolist(), "quaternion": matrix_to_quaternion(T.R).tolist(), "t": T.t.tolist()}


def transform_from_json(obj):
    try:
        R = np.asarray(obj["R"], dtype=np.float64).reshape(3, 3)
        t = np.asarray(obj["t"], dtype=np.float64).reshape(3)
        q = np.asarray(obj["quaternion"], dtype=np.float64).reshape(4)
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed transform: {exc}") from exc
    if abs(np.linalg.norm(q) - 1) > QUATERNION_TOL:
        raise FormatError("transform quaternion is not unit length")
    err = np.abs(quaternion_to_matrix(q) - R).max()
    if err > QUATERNION_TOL:
        raise FormatError(f"rotation matrix and quaternion disagree by {err:.3g}")
    return RigidTransform(R, t)


def params_to_json(params):
    T = RigidTransform(params.R, params.t)
    return {"v": params.v.tolist(), "s": params.s.tolist(), **transform_to_json(T)}


def params_from_json(obj):
    T = transform_from_json(obj)
    return ShapeParams(np.asarray(obj["v"], dtype=np.float64), np.asarray(obj["s"], dtype=np.float64), T.R, T.t)


def _float_or_none(x):
    return float(x) if np.isfinite(x) else None


def estimate_to_json(estimate, extra=None):
    doc = {
        "kind": "estimate",
        "version": SPEC_VERSION,
        "units": UNITS,
        "params": params_to_json(estimate.params),
        "loss": float(estimate.loss),
        "restart_index": int(estimate.restart_index),
        "restart_losses": [_float_or_none(x) for x in estimate.restart_losses],
        "centroid": estimate.centroid.tolist(),
    }
    doc.update(extra or {})
    return doc


def grasp_to_json(spec, extra=None):
    doc = {
        "kind": "grasp",
        "version": SPEC_VERSION,
        "units": UNITS,
        "pairs": spec.n_pairs,
        "contact_eps": spec.contact_eps,
        "seed": spec.seed,
        "contact_indices": spec.contact_indices.tolist(),
        "gripper_points_local": spec.gripper_points_local.tolist(),
        "demo_grasp": transform_to_json(spec.demo_grasp),
    }
    if spec.gripper_surface_local is not None:
        doc["gripper_surface_local"] = spec.gripper_surface_local.tolist()
    if spec.object_surface is not None:
        doc["object_surface"] = spec.object_surface.tolist()
    doc.update(extra or {})
    return doc


def grasp_from_json(doc):
    _check_kind(doc, "grasp")
    return GraspSpec(
        doc["contact_indices"],
        doc["gripper_points_local"],
        transform_from_json(doc["demo_grasp"]),
        doc["contact_eps"],
        doc["seed"],
        doc.get("gripper_surface_local"),
        doc.get("object_surface"),
    )


def placement_to_json(spec, extra=None):
    doc = {
        "kind": "placement",
        "version": SPEC_VERSION,
        "units": UNITS,
        "pairs": spec.n_pairs,
        "neighbors": spec.n_neighbors,
        "delta": spec.delta,
        "seed": spec.seed,
        "target_indices": spec.target_indices.tolist(),
        "anchor_indices": spec.anchor_indices.tolist(),
        "anchor_offsets": spec.anchor_offsets.tolist(),
        "target_points": spec.target_points.tolist(),
    }
    doc.update(extra or {})
    return doc


def placement_from_json(doc):
    _check_kind(doc, "placement")
    try:
        return PlacementSpec(
            doc["target_indices"], doc["anchor_indices"], doc["anchor_offsets"], doc["target_points"], doc["delta"], doc["seed"]
        )
    except KeyError as exc:
        raise FormatError(f"placement spec is missing {exc.args[0]!r}") from exc


def _check_kind(doc, kind):
    if doc.get("kind") != kind:
        raise FormatError(f"expected a {kind} spec, got {doc.get('kind')!r}")
    if doc.get("version") != SPEC_VERSION:
        raise FormatError(f"unsupported {kind} spec version {doc.get('version')!r}")
    if doc.get("units") != UNITS:
        raise FormatError(f"{kind} spec must declare units {UNITS}")


def write_json(path, doc):
    Path(path).write_text(_json_dumps(doc) + "\n", encoding="utf-8")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from exc
