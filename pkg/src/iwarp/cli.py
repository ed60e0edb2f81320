"""Command line interface: ``iwarp <command> [options]``.

Exit codes: 0 success, 2 input error, 3 inference failure, 4 extraction
failure, 5 transfer failure, 1 any other library error. Errors are reported
as one JSON object on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .benchmark import TASKS, Benchmark, ScenarioConfig, format_table, make_demo_scene, start_poses
from .cluster import dbscan, split_clusters
from .cpd import CpdConfig
from .exceptions import (
    DegenerateConfiguration,
    ExtractionError,
    InferenceFailed,
    InputError,
    IWarpError,
    NoContacts,
    NoNearbyPoints,
)
from .formats import (
    UNITS,
    estimate_to_json,
    grasp_from_json,
    grasp_to_json,
    load_model,
    placement_from_json,
    placement_to_json,
    read_cloud,
    read_json,
    read_mesh,
    save_model,
    transform_from_json,
    transform_to_json,
    write_json,
    write_obj,
    write_ply,
)
from .inference import InferenceConfig, infer_shape_pose, infer_shape_pose_screened
from .interaction import (
    DEFAULT_CONTACT_EPS,
    DEFAULT_DELTA,
    DEFAULT_NEIGHBORS,
    DEFAULT_PAIRS,
    extract_grasp_contacts,
    extract_placement_points,
    gripper_target_pose,
    placement_in_hand_frame,
    transfer_grasp,
    transfer_placement,
    virtual_point_error,
)
from .mesh import sample_surface_even
from .synthetic import CATEGORIES, PARAM_RANGES, generate_family, make_object
from .warp import N_CANONICAL_SAMPLES, N_OBJECT_SAMPLES, learn_warp_space

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_INPUT = 2
EXIT_INFERENCE = 3
EXIT_EXTRACTION = 4
EXIT_TRANSFER = 5


class TransferFailed(IWarpError):
    def __init__(self, cause):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause


def _error_payload(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, InferenceFailed):
        doc["restart_losses"] = [x if np.isfinite(x) else None for x in exc.losses]
    if isinstance(exc, NoContacts):
        doc["min_distance"] = exc.min_distance
    if isinstance(exc, NoNearbyPoints):
        doc["max_pairs"] = exc.max_pairs
        doc["min_distance"] = exc.min_distance
    return doc


def exit_code(exc):
    if isinstance(exc, InputError):
        return EXIT_INPUT
    if isinstance(exc, InferenceFailed):
        return EXIT_INFERENCE
    if isinstance(exc, ExtractionError):
        return EXIT_EXTRACTION
    if isinstance(exc, (TransferFailed, DegenerateConfiguration)):
        return EXIT_TRANSFER
    return EXIT_OTHER


def _print(doc):
    print(json.dumps(doc, sort_keys=True, indent=2))


# ----------------------------------------------------------------------------
# shared option groups


def _add_inference_flags(p):
    g = p.add_argument_group("inference")
    g.add_argument("--restarts", type=int, default=12, help="random initial rotations S (default 12)")
    g.add_argument("--steps", type=int, default=100, help="optimizer steps T per restart (default 100)")
    g.add_argument("--lr", type=float, default=1e-2, help="Adam learning rate (default 1e-2)")
    g.add_argument("--beta-reg", type=float, default=1e-2, help="object size regularizer weight (default 1e-2)")
    g.add_argument("--subsample", type=int, default=1000, help="decoded points used per step (default 1000)")
    g.add_argument(
        "--rotation-search",
        choices=("random", "icosahedral"),
        default="random",
        help="initial rotations: seeded random draws, or a short screen of the 60 icosahedral rotations "
        "followed by full runs from the best --restarts of them (default random)",
    )
    g.add_argument("--screen-steps", type=int, default=40, help="steps per candidate in the icosahedral screen (default 40)")


def _add_seed(p, help_text="random seed (default 0)"):
    p.add_argument("--seed", type=int, default=0, help=help_text)


def _inference_config(args):
    return InferenceConfig(args.restarts, args.steps, args.lr, args.beta_reg, args.subsample, args.seed)


def _config_doc(args):
    return {**vars(_inference_config(args)), "rotation_search": args.rotation_search, "screen_steps": args.screen_steps}


def _infer(args, space, cloud):
    cfg = _inference_config(args)
    if args.rotation_search == "icosahedral":
        return infer_shape_pose_screened(space, cloud, cfg, screen_steps=args.screen_steps, n_jobs=args.jobs)
    return infer_shape_pose(space, cloud, cfg, n_jobs=args.jobs)


def _add_interaction_flags(p):
    g = p.add_argument_group("interaction points")
    g.add_argument("--delta", type=float, default=DEFAULT_DELTA, help="nearby-point threshold in meters (default 0.02)")
    g.add_argument("--pairs", type=int, default=DEFAULT_PAIRS, help="interaction point pairs P (default 32)")
    g.add_argument("--neighbors", type=int, default=DEFAULT_NEIGHBORS, help="anchor neighbors L per virtual point (default 10)")
    g.add_argument(
        "--contact-eps", type=float, default=DEFAULT_CONTACT_EPS, help="gripper contact distance in meters (default 1e-3)"
    )


# ----------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene:
        return _gen_scene(args, out)
    if not args.category:
        raise InputError("either --category or --scene is required")
    meshes, params = generate_family(args.category, args.count, args.seed)
    files = []
    for i, mesh in enumerate(meshes):
        name = f"{args.category}_{i:03d}.obj"
        write_obj(out / name, mesh)
        files.append(name)
    manifest = {
        "category": args.category,
        "count": args.count,
        "seed": args.seed,
        "units": UNITS,
        "ranges": {k: list(v) for k, v in PARAM_RANGES[args.category].items()},
        "objects": [{"file": f, "params": p} for f, p in zip(files, params)],
    }
    write_json(out / "manifest.json", manifest)
    _print({"written": files, "manifest": str(out / "manifest.json")})
    return EXIT_OK


def _gen_scene(args, out):
    """Demonstration scene, or with ``--trial`` a novel scene of the benchmark."""
    task = args.scene
    if args.trial is None:
        scene = make_demo_scene(task, args.points, args.seed)
        obs_a, obs_b = scene["observed_a"], scene["observed_b"]
        params_a, params_b = scene["params_a"], scene["params_b"]
        truth = {"pose_a": transform_to_json(scene["pose_a"])}
        write_obj(out / "gripper.obj", scene["gripper"])
        extra = {"gripper_mesh": "gripper.obj", "grasp": transform_to_json(scene["grasp"])}
    else:
        cfg = ScenarioConfig(task=task, seed=args.seed, start_pose=args.start_pose)
        bench = Benchmark.__new__(Benchmark)
        bench.cfg = cfg
        params_a, params_b = bench.trial_objects(args.trial)
        rng = np.random.default_rng([args.seed, args.trial])
        pose_a, pose_b = start_poses(cfg, rng)
        cat_a, cat_b = TASKS[task]
        sa, sb = np.random.SeedSequence([args.seed, args.trial, 3]).spawn(2)
        obs_a, _ = sample_surface_even(make_object(cat_a, params_a).transformed(pose_a), args.points, sa)
        obs_b, _ = sample_surface_even(make_object(cat_b, params_b).transformed(pose_b), args.points, sb)
        truth = {"pose_a": transform_to_json(pose_a), "pose_b": transform_to_json(pose_b)}
        extra = {}
    write_ply(out / "cloud_a.ply", obs_a)
    write_ply(out / "cloud_b.ply", obs_b)
    doc = {
        "kind": "scene",
        "task": task,
        "units": UNITS,
        "cloud_a": "cloud_a.ply",
        "cloud_b": "cloud_b.ply",
        "params_a": params_a,
        "params_b": params_b,
        "truth": truth,
        **extra,
    }
    write_json(out / "scene.json", doc)
    _print({"scene": str(out / "scene.json")})
    return EXIT_OK


def _mesh_files(mesh_dir):
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise InputError(f"{mesh_dir}: not a directory")
    return sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in (".obj", ".ply"))


def cmd_learn(args):
    files = _mesh_files(args.mesh_dir)
    meshes = [read_mesh(f) for f in files]
    if len(meshes) < 2:
        raise InputError("need at least 2 meshes")
    cfg = CpdConfig(args.alpha, args.kernel_beta, args.max_iters, args.tol, args.w)
    space = learn_warp_space(
        meshes,
        args.latent_dim,
        cfg,
        args.selection,
        args.seed,
        args.object_samples,
        args.canonical_samples,
        args.jobs,
    )
    space.meta["files"] = [f.name for f in files]
    save_model(args.out, space, args.category or "")
    _print(
        {
            "model": str(args.out),
            "canonical_index": space.meta["canonical_index"],
            "canonical_file": files[space.meta["canonical_index"]].name,
            "latent_dim": space.latent_dim,
            "explained_variance_ratio": space.explained_variance_ratio().tolist(),
        }
    )
    return EXIT_OK


def _read_nonempty_cloud(path):
    cloud = read_cloud(path)
    if len(cloud) == 0:
        raise InputError(f"{path}: point cloud is empty")
    return cloud


def cmd_infer(args):
    space, category = load_model(args.model)
    cloud = _read_nonempty_cloud(args.cloud)
    est = _infer(args, space, cloud)
    mesh_out = Path(args.mesh_out) if args.mesh_out else Path(args.out).with_suffix(".obj")
    write_obj(mesh_out, est.mesh)
    doc = estimate_to_json(est, {"category": category, "config": _config_doc(args), "mesh": mesh_out.name})
    write_json(args.out, doc)
    _print({"estimate": str(args.out), "mesh": str(mesh_out), "loss": est.loss, "restart_index": est.restart_index})
    return EXIT_OK


def _scene_paths(scene_path):
    scene_path = Path(scene_path)
    doc = read_json(scene_path)
    if doc.get("kind") != "scene":
        raise InputError(f"{scene_path}: not a scene file")
    return doc, scene_path.parent


def _infer_pair(args, space_a, space_b, cloud_a, cloud_b):
    return _infer(args, space_a, cloud_a), _infer(args, space_b, cloud_b)


def cmd_record_demo(args):
    space_a, _ = load_model(args.model_a)
    space_b, _ = load_model(args.model_b)
    scene, root = _scene_paths(args.scene)
    cloud_a = _read_nonempty_cloud(root / scene["cloud_a"])
    cloud_b = _read_nonempty_cloud(root / scene["cloud_b"])
    ea, eb = _infer_pair(args, space_a, space_b, cloud_a, cloud_b)
    ya, yb = space_a.decode(ea.params), space_b.decode(eb.params)
    estimates = {"estimate_a": estimate_to_json(ea), "estimate_b": estimate_to_json(eb)}

    if args.out_grasp:
        if "gripper_mesh" not in scene or "grasp" not in scene:
            raise InputError("scene has no gripper mesh or grasp pose")
        gripper = read_mesh(root / scene["gripper_mesh"])
        grasp = transform_from_json(scene["grasp"])
        gspec = extract_grasp_contacts(ea.mesh, ya, gripper, grasp, args.contact_eps, args.pairs, args.seed)
        write_json(args.out_grasp, grasp_to_json(gspec, {"estimate": estimates["estimate_a"]}))

    pspec = extract_placement_points(ya, yb, args.delta, args.pairs, args.neighbors, args.seed)
    err = virtual_point_error(pspec, ya, yb)
    check = {"virtual_point_max_error": err, "virtual_point_check": bool(err < 1e-12)}
    write_json(args.out_placement, placement_to_json(pspec, {**check, **estimates}))
    _print({"placement": str(args.out_placement), "grasp": args.out_grasp and str(args.out_grasp), **check})
    return EXIT_OK


def cmd_transfer(args):
    space_a, _ = load_model(args.model_a)
    space_b, _ = load_model(args.model_b)
    pspec = placement_from_json(read_json(args.placement))
    gspec = grasp_from_json(read_json(args.grasp)) if args.grasp else None
    if args.scene:
        scene, root = _scene_paths(args.scene)
        cloud_a = _read_nonempty_cloud(root / scene["cloud_a"])
        cloud_b = _read_nonempty_cloud(root / scene["cloud_b"])
    else:
        if not (args.cloud_a and args.cloud_b):
            raise InputError("give --scene or both --cloud-a and --cloud-b")
        cloud_a = _read_nonempty_cloud(args.cloud_a)
        cloud_b = _read_nonempty_cloud(args.cloud_b)
    ea, eb = _infer_pair(args, space_a, space_b, cloud_a, cloud_b)
    ya, yb = space_a.decode(ea.params), space_b.decode(eb.params)
    try:
        placement = transfer_placement(pspec, ya, yb)
        grasp = transfer_grasp(gspec, ya) if gspec else None
    except (IWarpError, ValueError) as exc:
        raise TransferFailed(exc) from exc
    doc = {
        "kind": "transfer",
        "units": UNITS,
        "placement": transform_to_json(placement),
        "estimate_a": estimate_to_json(ea),
        "estimate_b": estimate_to_json(eb),
    }
    if grasp is not None:
        doc["grasp"] = transform_to_json(grasp)
        doc["gripper_target"] = transform_to_json(gripper_target_pose(placement, grasp))
        doc["placement_in_hand"] = transform_to_json(placement_in_hand_frame(placement, grasp))
    write_json(args.out, doc)
    _print({"transfer": str(args.out)})
    return EXIT_OK


def cmd_benchmark(args):
    path = Path(args.scenario)
    doc = read_json(path)
    cfg = ScenarioConfig.from_dict(doc)
    if args.jobs:
        cfg.n_jobs = args.jobs
    root = path.parent
    space_a = load_model(root / cfg.model_a)[0] if cfg.model_a else None
    space_b = load_model(root / cfg.model_b)[0] if cfg.model_b else None
    placement = placement_from_json(read_json(root / cfg.placement_spec)) if cfg.placement_spec else None
    bench = Benchmark(cfg, space_a, space_b, placement)
    report = bench.run()
    if args.out:
        write_json(args.out, report)
    print(format_table(report))
    print(f"trial time: {sum(bench.seconds):.1f} s total, {max(bench.seconds):.1f} s max")
    return EXIT_OK


def cmd_segment(args):
    cloud = read_cloud(args.cloud)
    labels = dbscan(cloud, args.eps, args.min_pts)
    clusters = split_clusters(cloud, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, c in enumerate(clusters):
        name = out / f"cluster_{i:03d}.ply"
        write_ply(name, c)
        files.append(str(name))
    if not clusters:
        print(json.dumps({"warning": "no clusters found; every point is noise"}), file=sys.stderr)
    _print({"clusters": files, "sizes": [len(c) for c in clusters], "noise": int(np.sum(labels < 0))})
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="iwarp", description="Category-level shape warping and skill transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a procedural object family or a demo/trial scene")
    p.add_argument("--category", choices=CATEGORIES, help="object family to generate")
    p.add_argument("--count", type=int, default=10, help="number of objects K (default 10)")
    p.add_argument("--scene", choices=sorted(TASKS), help="write a scene for this task instead of a family")
    p.add_argument("--trial", type=int, help="with --scene: write benchmark trial N instead of the demonstration")
    p.add_argument("--start-pose", choices=("upright", "arbitrary"), default="arbitrary", help="trial start pose")
    p.add_argument("--points", type=int, default=1000, help="observed points per object in a scene (default 1000)")
    _add_seed(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("learn", help="learn a warp model from a directory of meshes")
    p.add_argument("mesh_dir", help="directory of .obj/.ply training meshes (sorted by name)")
    p.add_argument("--latent-dim", type=int, default=None, help="PCA dimension d (default min(K-1, 8))")
    p.add_argument("--alpha", type=float, default=2.0, help="CPD regularization weight (default 2.0)")
    p.add_argument("--kernel-beta", type=float, default=2.0, help="CPD Gaussian kernel width (default 2.0)")
    p.add_argument("--max-iters", type=int, default=100, help="CPD iteration cap (default 100)")
    p.add_argument("--tol", type=float, default=1e-7, help="CPD relative objective tolerance (default 1e-7)")
    p.add_argument("--w", type=float, default=0.0, help="CPD uniform outlier weight in [0, 1) (default 0)")
    p.add_argument("--selection", choices=("auto", "exhaustive", "approximate"), default="auto", help="canonical rule")
    p.add_argument("--object-samples", type=int, default=N_OBJECT_SAMPLES, help="points per training object")
    p.add_argument("--canonical-samples", type=int, default=N_CANONICAL_SAMPLES, help="surface samples of the canonical")
    p.add_argument("--category", default="", help="category name stored in the model")
    p.add_argument("--jobs", type=int, default=1, help="parallel registrations (result is unaffected)")
    _add_seed(p)
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("infer", help="infer shape and pose from an observed cloud")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--cloud", required=True, help="observed PLY cloud")
    _add_inference_flags(p)
    _add_seed(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel restarts (result is unaffected)")
    p.add_argument("--out", required=True, help="estimate JSON")
    p.add_argument("--mesh-out", help="reconstructed OBJ mesh (default: --out with .obj suffix)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("record-demo", help="extract grasp and placement specs from a demonstration scene")
    p.add_argument("--model-a", required=True, help="model of the grasped/placed object A")
    p.add_argument("--model-b", required=True, help="model of the reference object B")
    p.add_argument("--scene", required=True, help="scene JSON (clouds, gripper mesh, grasp pose)")
    _add_interaction_flags(p)
    _add_inference_flags(p)
    _add_seed(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel restarts (result is unaffected)")
    p.add_argument("--out-grasp", help="grasp spec JSON")
    p.add_argument("--out-placement", required=True, help="placement spec JSON")
    p.set_defaults(func=cmd_record_demo)

    p = sub.add_parser("transfer", help="predict grasp and placement poses for a new scene")
    p.add_argument("--model-a", required=True, help="model of the grasped/placed object A")
    p.add_argument("--model-b", required=True, help="model of the reference object B")
    p.add_argument("--placement", required=True, help="placement spec JSON")
    p.add_argument("--grasp", help="grasp spec JSON")
    p.add_argument("--scene", help="scene JSON with cloud_a/cloud_b")
    p.add_argument("--cloud-a", help="observed cloud of object A")
    p.add_argument("--cloud-b", help="observed cloud of object B")
    _add_inference_flags(p)
    _add_seed(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel restarts (result is unaffected)")
    p.add_argument("--out", required=True, help="output poses JSON")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("benchmark", help="run a synthetic placement benchmark scenario")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--jobs", type=int, default=0, help="parallel trials (overrides the scenario)")
    p.add_argument("--out", help="report JSON")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("segment", help="split a cloud into DBSCAN clusters")
    p.add_argument("--cloud", required=True, help="input PLY cloud")
    p.add_argument("--eps", type=float, required=True, help="neighborhood radius in meters")
    p.add_argument("--min-pts", type=int, required=True, help="core point threshold (counts the point itself)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_segment)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        # Pin native thread pools so floating-point reductions, and hence
        # every output byte, do not depend on the machine's thread count.
        with threadpool_limits(limits=1):
            return args.func(args)
    except IWarpError as exc:
        code = exit_code(exc)
        print(json.dumps({**_error_payload(exc), "exit_code": code}, sort_keys=True), file=sys.stderr)
        return code
    except OSError as exc:
        doc = {"error": type(exc).__name__, "message": exc.strerror or str(exc), "path": exc.filename}
        print(json.dumps({**doc, "exit_code": EXIT_INPUT}, sort_keys=True), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
