"""Procedural object families standing in for category training meshes.

All objects share one canonical pose: the up axis is +z, the object rests
on z = 0 and its symmetry axis (if any) is the z axis. Mug handles point
along +x; tree branch 0 points along +x. Every mesh is watertight (closed
components may interpenetrate, as in a handle welded to a cup).

Units are meters. Parameter ranges are documented in ``PARAM_RANGES``.
"""

import numpy as np

from .exceptions import InputError
from .geometry import RigidTransform, axis_angle_to_matrix
from .mesh import TriMesh, concatenate

CATEGORIES = ("mug", "bowl", "bottle", "box", "tree")

PARAM_RANGES = {
    "mug": {
        "radius": (0.035, 0.048),
        "height": (0.080, 0.115),
        "wall": (0.004, 0.006),
        "handle_radius": (0.028, 0.036),
        "handle_thickness": (0.0045, 0.0065),
        "handle_height": (0.45, 0.55),
    },
    "bowl": {
        "radius": (0.060, 0.090),
        "depth_ratio": (0.45, 0.70),
        "wall": (0.004, 0.007),
        "foot_radius_ratio": (0.35, 0.55),
    },
    "bottle": {
        "radius": (0.028, 0.042),
        "height": (0.180, 0.260),
        "neck_radius_ratio": (0.30, 0.45),
        "shoulder_ratio": (0.55, 0.72),
        "neck_length": (0.030, 0.050),
    },
    "box": {
        "length": (0.14, 0.22),
        "width": (0.11, 0.16),
        "height": (0.08, 0.14),
        "wall": (0.005, 0.008),
    },
    "tree": {
        "post_radius": (0.009, 0.013),
        "post_height": (0.28, 0.36),
        "branch_radius": (0.0045, 0.0060),
        "branch_length": (0.085, 0.110),
        "branch_height": (0.17, 0.22),
        "branch_angle": (0.45, 0.65),
    },
}


def signed_volume(vertices, faces):
    tri = vertices[faces]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def _outward(vertices, faces):
    if signed_volume(vertices, faces) < 0:
        faces = faces[:, ::-1].copy()
    return TriMesh(vertices, faces)


def _densify(profile, max_step):
    """Insert points so consecutive profile points are at most ``max_step`` apart."""
    out = [profile[0]]
    for a, b in zip(profile[:-1], profile[1:]):
        k = max(1, int(np.ceil(np.linalg.norm(np.subtract(b, a)) / max_step)))
        for s in range(1, k):
            out.append(np.add(a, np.subtract(b, a) * s / k))
        out.append(b)
    return np.asarray(out, dtype=np.float64)


def lathe(profile, segments=32, max_step=None):
    """Solid of revolution about z of an ``(r, z)`` profile.

    The first and last profile points must lie on the axis (``r == 0``);
    they become poles closed with triangle fans.
    """
    profile = np.asarray(profile, dtype=np.float64)
    if max_step is not None:
        profile = _densify(profile, max_step)
    if profile[0, 0] != 0 or profile[-1, 0] != 0 or np.any(profile[1:-1, 0] <= 0):
        raise InputError("profile must start and end on the axis with r > 0 between")
    theta = 2 * np.pi * np.arange(segments) / segments
    rings = profile[1:-1]
    ring_pts = np.stack(
        [
            rings[:, None, 0] * np.cos(theta)[None],
            rings[:, None, 0] * np.sin(theta)[None],
            np.broadcast_to(rings[:, None, 1], (len(rings), segments)),
        ],
        axis=-1,
    ).reshape(-1, 3)
    vertices = np.concatenate([[[0, 0, profile[0, 1]]], ring_pts, [[0, 0, profile[-1, 1]]]])
    S, nr = segments, len(rings)
    k = np.arange(S)
    kn = (k + 1) % S
    faces = [np.stack([np.zeros(S, int), 1 + kn, 1 + k], axis=1)]
    for j in range(nr - 1):
        a, b = 1 + j * S, 1 + (j + 1) * S
        faces.append(np.stack([a + k, a + kn, b + kn], axis=1))
        faces.append(np.stack([a + k, b + kn, b + k], axis=1))
    last = len(vertices) - 1
    base = 1 + (nr - 1) * S
    faces.append(np.stack([np.full(S, last), base + k, base + kn], axis=1))
    return _outward(vertices, np.concatenate(faces))


def grid_box(lo, hi, divisions=4):
    """Watertight cuboid with each face split into a ``divisions`` grid."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    e = hi - lo
    X, Y, Z = np.eye(3)
    # (origin, u, v) with u x v pointing outward.
    sides = [
        (lo, Z * e[2], Y * e[1]),
        (lo + X * e[0], Y * e[1], Z * e[2]),
        (lo, X * e[0], Z * e[2]),
        (lo + Y * e[1], Z * e[2], X * e[0]),
        (lo, Y * e[1], X * e[0]),
        (lo + Z * e[2], X * e[0], Y * e[1]),
    ]
    n = divisions
    s = np.linspace(0, 1, n + 1)
    verts, faces = [], []
    for o, u, v in sides:
        grid = o + s[:, None, None] * u + s[None, :, None] * v
        base = sum(len(x) for x in verts)
        verts.append(grid.reshape(-1, 3))
        idx = base + np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
        a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        faces += [np.stack([a, b, c], 1), np.stack([a, c, d], 1)]
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    _, first, inverse = np.unique(np.round(verts, 12), axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # Keep merged vertices in first-occurrence order for stable output.
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return TriMesh(verts[first[order]], remap[inverse[faces]])


def cylinder(p0, p1, radius, segments=16, max_step=None):
    """Closed cylinder between two points."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    m = lathe([(0, 0), (radius, 0), (radius, length), (0, length)], segments, max_step)
    z = np.array([0.0, 0.0, 1.0])
    d = axis / length
    c = np.cross(z, d)
    if np.linalg.norm(c) < 1e-12:
        R = np.eye(3) if d[2] > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        R = axis_angle_to_matrix(c, np.arctan2(np.linalg.norm(c), z @ d))
    return m.transformed(RigidTransform(R, p0))


def torus_arc(center, major, minor, start, stop, arc_segments=24, tube_segments=12):
    """Tube of radius ``minor`` swept along an arc in the x-z plane, end caps closed.

    The arc is centered at ``center`` with radius ``major``; angles are
    measured from +x toward +z.
    """
    center = np.asarray(center, float)
    phi = np.linspace(start, stop, arc_segments + 1)
    psi = 2 * np.pi * np.arange(tube_segments) / tube_segments
    radial = np.stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)], axis=1)
    y = np.array([0.0, 1.0, 0.0])
    pts = (
        center
        + major * radial[:, None, :]
        + minor * (np.cos(psi)[None, :, None] * radial[:, None, :] + np.sin(psi)[None, :, None] * y)
    ).reshape(-1, 3)
    T = tube_segments
    k = np.arange(T)
    kn = (k + 1) % T
    faces = []
    for j in range(arc_segments):
        a, b = j * T, (j + 1) * T
        faces += [np.stack([a + k, a + kn, b + kn], 1), np.stack([a + k, b + kn, b + k], 1)]
    c0, c1 = len(pts), len(pts) + 1
    ends = np.array([center + major * radial[0], center + major * radial[-1]])
    last = arc_segments * T
    faces.append(np.stack([np.full(T, c0), kn, k], 1))
    faces.append(np.stack([np.full(T, c1), last + k, last + kn], 1))
    vertices = np.concatenate([pts, ends])
    faces = np.concatenate(faces)
    return _outward(vertices, faces)


# ----------------------------------------------------------------------------
# categories


def _draw(rng, ranges):
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in ranges.items()}


def handle_geometry(p):
    """Handle arc center, major radius and tube radius of a mug."""
    center = np.array([p["radius"], 0.0, p["handle_height"] * p["height"]])
    return center, p["handle_radius"], p["handle_thickness"]


def make_mug(p, segments=32):
    R, H, t = p["radius"], p["height"], p["wall"]
    body = lathe(
        [(0, 0), (R, 0), (R, H), (R - t, H), (R - t, 1.5 * t), (0, 1.5 * t)],
        segments,
        max_step=0.012,
    )
    center, major, minor = handle_geometry(p)
    # The arc ends sink into the wall so the handle is welded to the body.
    gap = np.arcsin(min(0.9, 0.5 * t / major + minor / major))
    handle = torus_arc(center, major, minor, -np.pi / 2 - gap, np.pi / 2 + gap, 20, 10)
    return concatenate([body, handle])


def make_bowl(p, segments=32):
    R, t = p["radius"], p["wall"]
    depth = p["depth_ratio"] * R
    foot = p["foot_radius_ratio"] * R
    n = 8
    # Superellipse-like outer wall from the foot up to the rim.
    u = np.linspace(0, 1, n + 1)
    outer = [(foot + (R - foot) * np.sin(0.5 * np.pi * s), depth * (1 - np.cos(0.5 * np.pi * s))) for s in u]
    inner = [(max(r - t, 1e-3), z + t) for r, z in outer[::-1] if z + t <= depth]
    profile = [(0, 0)] + outer + [(R - t, depth)] + inner[1:] + [(0, t)]
    return lathe(profile, segments, max_step=0.015)


def make_bottle(p, segments=32):
    R, H = p["radius"], p["height"]
    neck_r = p["neck_radius_ratio"] * R
    shoulder = p["shoulder_ratio"] * H
    neck_start = H - p["neck_length"]
    profile = [(0, 0), (R, 0), (R, shoulder)]
    for s in np.linspace(0, 1, 6)[1:]:
        r = R + (neck_r - R) * (0.5 - 0.5 * np.cos(np.pi * s))
        profile.append((r, shoulder + (neck_start - shoulder) * s))
    profile += [(neck_r, H), (0, H)]
    return lathe(profile, segments, max_step=0.015)


def make_box(p, divisions=4):
    """Open-top container: floor plus four walls, each a closed slab."""
    L, W, H, t = p["length"], p["width"], p["height"], p["wall"]
    x, y = L / 2, W / 2
    slabs = [
        grid_box([-x, -y, 0], [x, y, t], divisions),
        grid_box([-x, -y, 0], [-x + t, y, H], divisions),
        grid_box([x - t, -y, 0], [x, y, H], divisions),
        grid_box([-x + t, -y, 0], [x - t, -y + t, H], divisions),
        grid_box([-x + t, y - t, 0], [x - t, y, H], divisions),
    ]
    return concatenate(slabs)


def box_interior(p):
    """Axis-aligned interior ``(lo, hi)`` of a container in its canonical pose."""
    L, W, H, t = p["length"], p["width"], p["height"], p["wall"]
    return np.array([-L / 2 + t, -W / 2 + t, t]), np.array([L / 2 - t, W / 2 - t, H])


BRANCH_AZIMUTHS = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)


def branch_axes(p):
    """(start, end) points of each branch axis of a tree."""
    axes = []
    for i, az in enumerate(BRANCH_AZIMUTHS):
        z0 = p["branch_height"] + 0.04 * i
        d = np.array(
            [np.cos(az) * np.cos(p["branch_angle"]), np.sin(az) * np.cos(p["branch_angle"]), np.sin(p["branch_angle"])]
        )
        start = np.array([0.0, 0.0, z0])
        axes.append((start, start + p["branch_length"] * d))
    return axes


def make_tree(p, segments=16):
    r, h = p["post_radius"], p["post_height"]
    parts = [cylinder([0, 0, 0], [0, 0, h], r, segments, max_step=0.03)]
    for start, end in branch_axes(p):
        parts.append(cylinder(start, end, p["branch_radius"], 12, max_step=0.025))
    return concatenate(parts)


_MAKERS = {"mug": make_mug, "bowl": make_bowl, "bottle": make_bottle, "box": make_box, "tree": make_tree}


def sample_params(category, rng):
    if category not in PARAM_RANGES:
        raise InputError(f"unknown category {category!r}; choose from {CATEGORIES}")
    return _draw(rng, PARAM_RANGES[category])


def make_object(category, params):
    if category not in _MAKERS:
        raise InputError(f"unknown category {category!r}; choose from {CATEGORIES}")
    return _MAKERS[category](params)


def generate_family(category, count, seed):
    """``count`` meshes and their parameter dicts, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = [sample_params(category, rng) for _ in range(count)]
    return [make_object(category, p) for p in params], params


def interpolate_params(category, t):
    """Parameters at fraction ``t`` in [0, 1] of every range (0.5 = midpoint)."""
    return {k: lo + t * (hi - lo) for k, (lo, hi) in PARAM_RANGES[category].items()}


# ----------------------------------------------------------------------------
# gripper


GRIPPER = {
    "finger_length": 0.045,
    "finger_width": 0.014,
    "finger_thickness": 0.008,
    "palm_height": 0.02,
    "palm_width": 0.10,
}


def make_gripper(opening, divisions=6):
    """Parallel-jaw gripper in its local frame.

    The fingertips lie at z = 0 and the fingers extend toward +z into the
    palm; the inner finger faces sit at ``y = -opening/2`` and
    ``y = +opening/2``. A grasp pose maps this frame into the world.
    """
    g = GRIPPER
    fl, fw, ft = g["finger_length"], g["finger_width"], g["finger_thickness"]
    o = opening / 2
    left = grid_box([-fw / 2, -o - ft, 0], [fw / 2, -o, fl], divisions)
    right = grid_box([-fw / 2, o, 0], [fw / 2, o + ft, fl], divisions)
    palm = grid_box(
        [-fw / 2, -g["palm_width"] / 2, fl], [fw / 2, g["palm_width"] / 2, fl + g["palm_height"]], 3
    )
    return concatenate([left, right, palm])


def mug_rim_grasp(p, depth=0.02, azimuth=np.pi):
    """Top-down pinch of a mug wall at the given azimuth.

    Returns the gripper opening and the grasp pose (gripper frame to the
    mug's canonical frame). The finger pads touch the inner and outer wall
    surfaces along the radial direction.
    """
    R, H, t = p["radius"], p["height"], p["wall"]
    radial = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    tangent = np.array([-np.sin(azimuth), np.cos(azimuth), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    # Gripper axes in the object frame: x along the wall tangent, y radial,
    # z (fingertips toward palm) up.
    Rg = np.stack([tangent, radial, up], axis=1)
    if np.linalg.det(Rg) < 0:
        Rg[:, 0] *= -1
    center = (R - t / 2) * radial + np.array([0.0, 0.0, H - depth])
    return t, RigidTransform(Rg, center)
