"""Synthetic relational-placement benchmark.

A trial draws a fresh child object A and parent object B, places them in
random start poses, infers both shapes from sampled surface points and
transfers the demonstrated placement. The placed meshes are then scored
geometrically:

* clearance: the minimum signed distance between the two surfaces must be
  at least ``-clearance_tol`` (no interpenetration beyond 1 mm);
* a task-specific support test (mug handle loop around a branch, bowl
  resting over the mug rim, bottle standing inside the container).
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binomtest

from .exceptions import IWarpError, InputError
from .geometry import RigidTransform, random_rotation
from .cpd import CpdConfig
from .inference import InferenceConfig, infer_shape_pose, infer_shape_pose_screened
from .interaction import (
    DEFAULT_DELTA,
    DEFAULT_NEIGHBORS,
    DEFAULT_PAIRS,
    extract_placement_points,
    transfer_placement,
)
from .mesh import sample_surface_even, signed_distance
from .synthetic import (
    GRIPPER,
    branch_axes,
    box_interior,
    generate_family,
    handle_geometry,
    interpolate_params,
    make_gripper,
    make_object,
    mug_rim_grasp,
    sample_params,
)
from .warp import learn_warp_space

TASKS = {
    "mug_on_tree": ("mug", "tree"),
    "bowl_on_mug": ("bowl", "mug"),
    "bottle_in_container": ("bottle", "box"),
}
UP = np.array([0.0, 0.0, 1.0])
# CPD kernel width per category (unit bbox diagonal); thin branches need a
# narrower kernel than the default to register branch onto branch.
KERNEL_BETA = {"tree": 0.2}


@dataclass
class ScenarioConfig:
    """Benchmark scenario; see ``from_dict`` for the JSON layout."""

    task: str = "mug_on_tree"
    trials: int = 50
    seed: int = 0
    start_pose: str = "arbitrary"
    novel: str = "heldout"
    model_a: str = None
    model_b: str = None
    placement_spec: str = None
    train_count: int = 10
    train_seed: int = 0
    latent_dim: int = 8
    n_object_samples: int = 1000
    n_canonical_samples: int = 1000
    selection: str = "approximate"
    kernel_beta_a: float = None
    kernel_beta_b: float = None
    rotation_search: str = "icosahedral"
    screen_steps: int = 40
    restarts: int = 6
    steps: int = 200
    lr: float = 1e-2
    beta: float = 1e-3
    subsample: int = 1000
    delta: float = DEFAULT_DELTA
    pairs: int = DEFAULT_PAIRS
    neighbors: int = DEFAULT_NEIGHBORS
    n_observed: int = 1000
    clearance_tol: float = 1e-3
    n_jobs: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise InputError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        if self.start_pose not in ("upright", "arbitrary"):
            raise InputError("start_pose must be 'upright' or 'arbitrary'")
        if self.novel not in ("heldout", "demo"):
            raise InputError("novel must be 'heldout' or 'demo'")
        if int(self.trials) != self.trials or self.trials < 1:
            raise InputError(f"trials must be >= 1, got {self.trials}")
        if self.rotation_search not in ("random", "icosahedral"):
            raise InputError("rotation_search must be 'random' or 'icosahedral'")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return asdict(self)

    def inference(self, seed):
        return InferenceConfig(self.restarts, self.steps, self.lr, self.beta, self.subsample, seed)

    def cpd(self, side):
        """CPD settings used to learn the warp space of object ``side`` ("a" or "b")."""
        category = TASKS[self.task][0 if side == "a" else 1]
        kb = self.kernel_beta_a if side == "a" else self.kernel_beta_b
        return CpdConfig(kernel_beta=KERNEL_BETA.get(category, 2.0) if kb is None else kb)


# ----------------------------------------------------------------------------
# demonstration geometry


def hanging_pose(mug, tree, branch=0, along=0.5):
    """Pose of a mug (canonical frame to tree frame) hung on a branch.

    The handle loop's normal is aligned with the branch, the handle points
    away from gravity and the branch axis passes through the middle of the
    loop opening.
    """
    start, end = branch_axes(tree)[branch]
    d = (end - start) / np.linalg.norm(end - start)
    u = UP - (UP @ d) * d
    u /= np.linalg.norm(u)
    R = np.stack([u, d, np.cross(u, d)], axis=1)
    center, major, minor = handle_geometry(mug)
    anchor = np.array([mug["radius"] + 0.5 * (major - minor), 0.0, center[2]])
    target = start + along * np.linalg.norm(end - start) * d
    return RigidTransform(R, target - R @ anchor)


def resting_pose(child_category, child, parent_category, parent, gap=0.002):
    """Upright pose of a bowl on a mug or a bottle in a container."""
    if child_category == "bowl" and parent_category == "mug":
        z = parent["height"] + gap
    elif child_category == "bottle" and parent_category == "box":
        z = parent["wall"] + gap
    else:
        raise InputError(f"no resting pose for {child_category} on {parent_category}")
    return RigidTransform(np.eye(3), np.array([0.0, 0.0, z]))


def demo_pose(task, params_a, params_b):
    cat_a, cat_b = TASKS[task]
    if task == "mug_on_tree":
        return hanging_pose(params_a, params_b)
    return resting_pose(cat_a, params_a, cat_b, params_b)


def demo_grasp(task, params_a, pose_a):
    """Gripper opening and world pose of a demonstration grasp on object A.

    The fingers squeeze the grasped wall by 1 mm on each side so contacts
    survive small reconstruction errors.
    """
    if TASKS[task][0] == "mug":
        opening, local = mug_rim_grasp(params_a)
    else:
        # Side pinch across the body at 40% of the object's height.
        cat = TASKS[task][0]
        r = params_a["radius"]
        h = params_a["radius"] * params_a["depth_ratio"] if cat == "bowl" else params_a["height"]
        opening = 2 * r
        Rg = np.stack([np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), UP], axis=1)
        local = RigidTransform(Rg, np.array([0.0, 0.0, 0.4 * h - GRIPPER["finger_length"] / 2]))
    return max(opening - 0.002, 1e-3), pose_a.compose(local)


def demo_params(task):
    cat_a, cat_b = TASKS[task]
    return interpolate_params(cat_a, 0.5), interpolate_params(cat_b, 0.5)


def make_demo_scene(task, n_observed=1000, seed=0):
    """Ground-truth demonstration scene in the parent's frame.

    Returns a dict with meshes, observed clouds, the object poses, the
    gripper (mesh in its local frame and world pose) and the parameters.
    """
    cat_a, cat_b = TASKS[task]
    pa, pb = demo_params(task)
    mesh_a, mesh_b = make_object(cat_a, pa), make_object(cat_b, pb)
    pose_a = demo_pose(task, pa, pb)
    placed_a = mesh_a.transformed(pose_a)
    ss = np.random.SeedSequence([seed, 7])
    sa, sb = ss.spawn(2)
    obs_a, _ = sample_surface_even(placed_a, n_observed, sa)
    obs_b, _ = sample_surface_even(mesh_b, n_observed, sb)
    opening, grasp = demo_grasp(task, pa, pose_a)
    return {
        "task": task,
        "params_a": pa,
        "params_b": pb,
        "mesh_a": placed_a,
        "mesh_b": mesh_b,
        "pose_a": pose_a,
        "observed_a": obs_a,
        "observed_b": obs_b,
        "gripper": make_gripper(opening),
        "grasp": grasp,
    }


# ----------------------------------------------------------------------------
# scoring


def min_clearance(mesh_a, mesh_b, n_samples=2000, seed=0):
    """Smallest signed distance between two closed surfaces (negative = overlap).

    Evaluated at the vertices and an even surface sample of each mesh
    against the other mesh.
    """
    ss = np.random.SeedSequence([seed, 11])
    sa, sb = ss.spawn(2)
    qa = np.concatenate([mesh_a.vertices, sample_surface_even(mesh_a, n_samples, sa)[0]])
    qb = np.concatenate([mesh_b.vertices, sample_surface_even(mesh_b, n_samples, sb)[0]])
    return float(min(signed_distance(qa, mesh_b).min(), signed_distance(qb, mesh_a).min()))


def branch_through_handle(mug, mug_pose, tree, tree_pose):
    """True if some branch axis crosses the opening of the mug's handle loop."""
    center, major, minor = handle_geometry(mug)
    to_mug = mug_pose.inverse().compose(tree_pose)
    for start, end in branch_axes(tree):
        p0, p1 = to_mug.apply(np.stack([start, end]))
        if p0[1] * p1[1] > 0 or p0[1] == p1[1]:
            continue
        x = p0 + (p1 - p0) * (p0[1] / (p0[1] - p1[1]))
        dx, dz = x[0] - center[0], x[2] - center[2]
        if dx > 0 and dx * dx + dz * dz < (major - minor) ** 2:
            return True
    return False


def bowl_supported(bowl, bowl_pose, mug, mug_pose, tol=1e-3):
    """Bowl base center over the mug rim's footprint and not below the rim."""
    to_mug = mug_pose.inverse().compose(bowl_pose)
    base = to_mug.apply(np.zeros((1, 3)))[0]
    lowest = to_mug.apply(make_object("bowl", bowl).vertices)[:, 2].min()
    return bool(np.hypot(base[0], base[1]) <= mug["radius"] and lowest >= mug["height"] - tol)


def bottle_contained(bottle, bottle_pose, box, box_pose, tol=1e-3):
    """Bottle bounding box inside the container's interior footprint, above its floor."""
    to_box = box_pose.inverse().compose(bottle_pose)
    pts = to_box.apply(make_object("bottle", bottle).vertices)
    lo, hi = box_interior(box)
    inside_xy = np.all(pts[:, :2].min(axis=0) >= lo[:2] - tol) and np.all(pts[:, :2].max(axis=0) <= hi[:2] + tol)
    return bool(inside_xy and pts[:, 2].min() >= lo[2] - tol)


def score_placement(task, params_a, pose_a, params_b, pose_b, clearance_tol=1e-3, seed=0):
    """Pure scoring of a placed pair; returns ``(success, clearance, support)``."""
    cat_a, cat_b = TASKS[task]
    mesh_a = make_object(cat_a, params_a).transformed(pose_a)
    mesh_b = make_object(cat_b, params_b).transformed(pose_b)
    clearance = min_clearance(mesh_a, mesh_b, seed=seed)
    if task == "mug_on_tree":
        support = branch_through_handle(params_a, pose_a, params_b, pose_b)
    elif task == "bowl_on_mug":
        support = bowl_supported(params_a, pose_a, params_b, pose_b)
    else:
        support = bottle_contained(params_a, pose_a, params_b, pose_b)
    return bool(clearance >= -clearance_tol and support), clearance, bool(support)


# ----------------------------------------------------------------------------
# trials


def start_poses(cfg, rng):
    """Random start poses of the child (A) and parent (B) objects."""
    yaw = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    Rb = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    pose_b = RigidTransform(Rb, np.r_[rng.uniform(-0.1, 0.1, 2), 0.0])
    if cfg.start_pose == "arbitrary":
        Ra = random_rotation(rng)
    else:
        yaw = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(yaw), np.sin(yaw)
        Ra = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    ang = rng.uniform(0, 2 * np.pi)
    ta = pose_b.t + 0.35 * np.array([np.cos(ang), np.sin(ang), 0.0]) + np.array([0, 0, 0.1])
    return RigidTransform(Ra, ta), pose_b


class Benchmark:
    """Holds the warp spaces and the demonstrated placement of a scenario."""

    def __init__(self, cfg, space_a=None, space_b=None, placement=None):
        self.cfg = cfg
        cat_a, cat_b = TASKS[cfg.task]
        self.space_a = space_a or self._learn(cat_a, "a")
        self.space_b = space_b or self._learn(cat_b, "b")
        self.placement = placement or self.record_demo()

    def _learn(self, category, side):
        cfg = self.cfg
        meshes, _ = generate_family(category, cfg.train_count, cfg.train_seed + (side == "b"))
        return learn_warp_space(
            meshes,
            cfg.latent_dim,
            cfg.cpd(side),
            selection=cfg.selection,
            seed=cfg.train_seed,
            n_object_samples=cfg.n_object_samples,
            n_canonical_samples=cfg.n_canonical_samples,
        )

    def infer(self, space, observed, seed):
        cfg = self.cfg
        if cfg.rotation_search == "icosahedral":
            return infer_shape_pose_screened(space, observed, cfg.inference(seed), screen_steps=cfg.screen_steps)
        return infer_shape_pose(space, observed, cfg.inference(seed))

    def record_demo(self):
        cfg = self.cfg
        scene = make_demo_scene(cfg.task, cfg.n_observed, cfg.seed)
        self.demo_scene = scene
        ya = self.infer(self.space_a, scene["observed_a"], cfg.seed)
        yb = self.infer(self.space_b, scene["observed_b"], cfg.seed)
        self.demo_estimates = (ya, yb)
        return extract_placement_points(
            self.space_a.decode(ya.params),
            self.space_b.decode(yb.params),
            cfg.delta,
            cfg.pairs,
            cfg.neighbors,
            cfg.seed,
        )

    def trial_objects(self, index):
        cat_a, cat_b = TASKS[self.cfg.task]
        if self.cfg.novel == "demo":
            return demo_params(self.cfg.task)
        rng = np.random.default_rng([self.cfg.seed, 1000 + index])
        return sample_params(cat_a, rng), sample_params(cat_b, rng)

    def run_trial(self, index):
        cfg = self.cfg
        t0 = time.perf_counter()
        cat_a, cat_b = TASKS[cfg.task]
        pa, pb = self.trial_objects(index)
        rng = np.random.default_rng([cfg.seed, index])
        start_a, pose_b = start_poses(cfg, rng)
        log = {"index": index, "params_a": pa, "params_b": pb, "start_a": _pose(start_a), "pose_b": _pose(pose_b)}
        try:
            ss = np.random.SeedSequence([cfg.seed, index, 3])
            sa, sb = ss.spawn(2)
            obs_a, _ = sample_surface_even(make_object(cat_a, pa).transformed(start_a), cfg.n_observed, sa)
            obs_b, _ = sample_surface_even(make_object(cat_b, pb).transformed(pose_b), cfg.n_observed, sb)
            ea = self.infer(self.space_a, obs_a, cfg.seed + index)
            eb = self.infer(self.space_b, obs_b, cfg.seed + index)
            motion = transfer_placement(self.placement, self.space_a.decode(ea.params), self.space_b.decode(eb.params))
            placed = motion.compose(start_a)
            ok, clearance, support = score_placement(cfg.task, pa, placed, pb, pose_b, cfg.clearance_tol, index)
            log.update(
                success=ok,
                clearance=clearance,
                support=support,
                placed_a=_pose(placed),
                loss_a=ea.loss,
                loss_b=eb.loss,
                error=None,
            )
        except IWarpError as exc:
            log.update(success=False, clearance=None, support=False, placed_a=None, error=f"{type(exc).__name__}: {exc}")
        log["seconds"] = time.perf_counter() - t0
        return log

    def run(self):
        """Run every trial; per-trial wall-clock times are kept in ``self.seconds``."""
        cfg = self.cfg
        if cfg.n_jobs == 1:
            logs = [self.run_trial(i) for i in range(cfg.trials)]
        else:
            with ThreadPoolExecutor(cfg.n_jobs) as pool:
                logs = list(pool.map(self.run_trial, range(cfg.trials)))
        self.seconds = [r["seconds"] for r in logs]
        return summarize(cfg, logs)


def _pose(T):
    return {"R": T.R.reshape(-1).tolist(), "t": T.t.tolist()}


def pose_from_log(doc):
    return RigidTransform(np.asarray(doc["R"]).reshape(3, 3), np.asarray(doc["t"]))


def rescore(task, log, clearance_tol=1e-3):
    """Recompute the success label of a logged trial from its geometry."""
    if log.get("placed_a") is None:
        return False
    ok, _, _ = score_placement(
        task, log["params_a"], pose_from_log(log["placed_a"]), log["params_b"], pose_from_log(log["pose_b"]),
        clearance_tol, log["index"],
    )
    return ok


def binomial_interval(successes, trials, level=0.95):
    """Exact (Clopper-Pearson) interval for a success proportion."""
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def summarize(cfg, logs):
    """Aggregate report; depends only on the trial outcomes, not on timing or ``n_jobs``."""
    logs = [{k: v for k, v in r.items() if k != "seconds"} for r in sorted(logs, key=lambda r: r["index"])]
    config = cfg.to_dict()
    config.pop("n_jobs")
    n = len(logs)
    k = sum(bool(r["success"]) for r in logs)
    lo, hi = binomial_interval(k, n)
    return {
        "task": cfg.task,
        "start_pose": cfg.start_pose,
        "trials": n,
        "successes": k,
        "rate": k / n,
        "ci95": [lo, hi],
        "config": config,
        "per_trial": logs,
    }


def format_table(report):
    lines = [f"{'trial':>5}  {'ok':>3}  {'clearance[mm]':>13}  {'support':>7}  note"]
    for r in report["per_trial"]:
        c = "-" if r["clearance"] is None else f"{1000 * r['clearance']:.2f}"
        lines.append(f"{r['index']:>5}  {'yes' if r['success'] else 'no':>3}  {c:>13}  {str(r['support']):>7}  {r['error'] or ''}")
    lo, hi = report["ci95"]
    lines.append(
        f"{report['task']} ({report['start_pose']}): {report['successes']}/{report['trials']} "
        f"= {100 * report['rate']:.1f}%  (95% CI {100 * lo:.1f}-{100 * hi:.1f}%)"
    )
    return "\n".join(lines)
