"""Command-line driver: scan | reconstruct | extract | eval | pipeline.

Every tunable lives in one resolved-config tree: defaults, overridden by an
optional JSON config file (--config), overridden by flags. --print-config
prints the tree actually used and exits; the printed JSON round-trips as a
config file. Exit codes: 0 success, 1 usage error, 2 runtime failure.

The sigma -> beta table (0 -> 800, 0.01 -> 150, 0.03 -> 50, 0.05 -> 30)
follows the noise-matching rule beta ~ sqrt(2)/sigma; --beta-override wins.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ebm import LangevinConfig
from .geometry import NormalizationTransform, denormalize, normalize
from .mesher import GridSpec, evaluate_field, field_to_mesh
from .metrics import evaluate
from .meshio import load_mesh, load_point_cloud, save_mesh, save_point_cloud
from .network import NetworkConfig, load_checkpoint
from .scanner import ScanConfig, scan
from .trainer import TrainConfig, train

SIGMA_BETA_TABLE = {0.0: 800.0, 0.01: 150.0, 0.03: 50.0, 0.05: 30.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit with 1, not argparse's 2
        raise UsageError(message)


def default_config() -> dict:
    return {
        "seed": 0,
        "network": asdict(NetworkConfig()),
        "training": {k: v for k, v in asdict(TrainConfig()).items() if k != "seed"},
        "langevin": asdict(LangevinConfig()),
        "scan": {"num_scans": 10, "rays_per_scan": 10000, "camera_radius": 2.5},
        "grid": {"resolution": 128, "lo": -1.0, "hi": 1.0},
        "eval": {"n_samples": 200000, "tau": 0.005},
    }


def resolve_beta(sigma: float, override=None) -> float:
    if override is not None:
        return float(override)
    if sigma in SIGMA_BETA_TABLE:
        return SIGMA_BETA_TABLE[sigma]
    if sigma <= 0.0:
        return SIGMA_BETA_TABLE[0.0]
    return float(np.sqrt(2.0) / sigma)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _load_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    for flag, target in (
        ("seed", ("seed",)),
        ("epochs", ("training", "epochs")),
        ("hidden_dim", ("network", "hidden_dim")),
        ("scans", ("scan", "num_scans")),
        ("rays", ("scan", "rays_per_scan")),
        ("res", ("grid", "resolution")),
        ("n", ("eval", "n_samples")),
        ("tau", ("eval", "tau")),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            node = cfg
            for key in target[:-1]:
                node = node[key]
            node[target[-1]] = val
    return cfg


def _maybe_print_config(args, cfg: dict) -> bool:
    if getattr(args, "print_config", False):
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return True
    return False


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


# ----- subcommand implementations ----------------------------------------------


def _cmd_scan(args) -> int:
    cfg = _load_config(args)
    if _maybe_print_config(args, cfg):
        return 0
    mesh_path = _require_file(args.mesh, "mesh file")
    mesh = load_mesh(mesh_path)
    mesh_n, tf = normalize(mesh)
    sc = ScanConfig(
        num_scans=cfg["scan"]["num_scans"],
        rays_per_scan=cfg["scan"]["rays_per_scan"],
        noise_sigma=args.sigma,
        camera_radius=cfg["scan"]["camera_radius"],
        seed=cfg["seed"],
    )
    cloud = scan(mesh_n, sc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_point_cloud(cloud, out)
    with open(out.with_suffix(out.suffix + ".transform.json"), "w") as fh:
        json.dump(tf.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    _log(f"scanned {len(cloud)} points from {mesh_path} (sigma={args.sigma}) -> {out}")
    return 0


def _train_from_cloud(cloud, tf, sigma, cfg, beta_override, run_dir, trace_sampler):
    beta = resolve_beta(sigma, beta_override)
    net_cfg = NetworkConfig(**cfg["network"])
    train_cfg = TrainConfig(**cfg["training"], seed=cfg["seed"])
    train_cfg.beta_target = beta
    lang = LangevinConfig(**cfg["langevin"])
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = _merge(cfg, {"training": {"beta_target": beta}, "sigma": sigma})
    with open(run_dir / "resolved-config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def progress(epoch, state):
        le, lk = state.history[-1]
        _log(
            f"epoch {epoch + 1}/{train_cfg.epochs} beta={state.beta:g} "
            f"loss_ebm={le:.4f} loss_eik={lk:.4f}"
        )

    return train(
        cloud, net_cfg, train_cfg, lang, run_dir=run_dir, transform=tf,
        trace_sampler=trace_sampler, progress=progress,
    )


def _cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    if _maybe_print_config(args, cfg):
        return 0
    cloud_path = _require_file(args.cloud, "point cloud")
    cloud = load_point_cloud(cloud_path)
    tf = None
    if args.transform:
        with open(_require_file(args.transform, "transform file")) as fh:
            tf = NormalizationTransform.from_dict(json.load(fh))
    if np.abs(cloud.points).max() > 1.0:
        if tf is not None:
            raise UsageError("cloud is not normalized; drop --transform or normalize the cloud")
        cloud, tf = normalize(cloud)
        _log("normalized input cloud")
    _train_from_cloud(cloud, tf, args.sigma, cfg, args.beta_override, args.out, args.trace_sampler)
    _log(f"training finished -> {args.out}")
    return 0


def _cmd_extract(args) -> int:
    cfg = _load_config(args)
    if _maybe_print_config(args, cfg):
        return 0
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    net, tf, _ = load_checkpoint(ckpt_path)
    grid = GridSpec(cfg["grid"]["resolution"], cfg["grid"]["lo"], cfg["grid"]["hi"])
    mesh = field_to_mesh(evaluate_field(net, grid), grid)
    if tf is not None:
        mesh = denormalize(mesh, tf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, out)
    _log(f"extracted {len(mesh.triangles)} triangles -> {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    if _maybe_print_config(args, cfg):
        return 0
    recon = load_mesh(_require_file(args.recon, "reconstructed mesh"))
    gt = load_mesh(_require_file(args.gt, "ground-truth mesh"))
    report = evaluate(recon, gt, n=cfg["eval"]["n_samples"], tau=cfg["eval"]["tau"], seed=cfg["seed"])
    text = report.to_json(args.out)
    print(text)
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    if _maybe_print_config(args, cfg):
        return 0
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    for mesh_path in args.meshes:
        mesh_file = _require_file(mesh_path, "mesh file")
        gt_mesh = load_mesh(mesh_file)
        for sigma in args.sigmas:
            tag = f"{mesh_file.stem}_sigma{sigma:g}"
            run_dir = out_root / tag
            _log(f"=== {tag} ===")
            mesh_n, tf = normalize(gt_mesh)
            sc = ScanConfig(
                num_scans=cfg["scan"]["num_scans"],
                rays_per_scan=cfg["scan"]["rays_per_scan"],
                noise_sigma=sigma,
                camera_radius=cfg["scan"]["camera_radius"],
                seed=cfg["seed"],
            )
            cloud = scan(mesh_n, sc)
            run_dir.mkdir(parents=True, exist_ok=True)
            save_point_cloud(cloud, run_dir / "scan.ply")
            _log(f"scanned {len(cloud)} points")
            _train_from_cloud(cloud, tf, sigma, cfg, args.beta_override, run_dir, args.trace_sampler)
            net, tf_saved, _ = load_checkpoint(run_dir / "checkpoint_final.ckpt")
            grid = GridSpec(cfg["grid"]["resolution"], cfg["grid"]["lo"], cfg["grid"]["hi"])
            mesh_rec = field_to_mesh(evaluate_field(net, grid), grid)
            mesh_rec = denormalize(mesh_rec, tf_saved)
            save_mesh(mesh_rec, run_dir / "reconstruction.obj")
            report = evaluate(
                mesh_rec, gt_mesh, n=cfg["eval"]["n_samples"], tau=cfg["eval"]["tau"], seed=cfg["seed"]
            )
            report.to_json(run_dir / "report.json")
            beta = resolve_beta(sigma, args.beta_override)
            rows.append(
                (mesh_file.stem, f"{sigma:g}", f"{beta:g}",
                 f"{report.chamfer:.9g}", f"{report.chamfer_x1e3:.6g}",
                 f"{report.f_score_pct:.6g}", f"{report.ncs_x1e2:.6g}")
            )
            _log(
                f"{tag}: CD(x1e-3)={report.chamfer_x1e3:.3f} "
                f"F-score={report.f_score_pct:.2f}% NCS(x1e-2)={report.ncs_x1e2:.2f}"
            )
    results = out_root / "results.csv"
    with open(results, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mesh", "sigma", "beta", "chamfer", "chamfer_x1e3", "f_score_pct", "ncs_x1e2"])
        writer.writerows(rows)
    _log(f"results table -> {results}")
    return 0


# ----- argument parsing ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")


def build_parser() -> _Parser:
    parser = _Parser(prog="ebmsurf", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="virtually scan a mesh into a noisy point cloud")
    p.add_argument("--mesh", required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--scans", type=int, default=None)
    p.add_argument("--rays", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("reconstruct", help="fit the model to a point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="assumed noise scale (sets beta)")
    p.add_argument("--beta-override", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--transform", help="normalization transform JSON to embed in checkpoints")
    p.add_argument("--trace-sampler", action="store_true")
    p.add_argument("--out", required=True, help="run directory")
    _add_common(p)
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("extract", help="marching-cubes mesh from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("eval", help="compare a reconstruction against ground truth")
    p.add_argument("--recon", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", help="write the JSON report here as well as stdout")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="scan + reconstruct + extract + eval for (mesh, sigma) pairs")
    p.add_argument("--meshes", nargs="+", required=True)
    p.add_argument("--sigmas", nargs="+", type=float, required=True)
    p.add_argument("--beta-override", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--scans", type=int, default=None)
    p.add_argument("--rays", type=int, default=None)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--trace-sampler", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
