"""Command line front end: synth | degrade | learn-dict | inpaint | eval.

Every command is a pure function of its arguments, input files and seeds;
identical invocations produce byte-identical outputs. Errors surface as a
single diagnostic line on stderr with the originating error code.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .config import default_experiment, load_experiment_config
from .container import read_cube, write_cube
from .core import HsiCube, HsiError, MaskCube, extract_patches
from .degrade import DegradeSpec, SynthSpec, degrade, synth_cube
from .dictionary import Dictionary, learn_ksvd
from .dip import DipNet
from .metrics import quality_report
from .solver import config_for_algo, solve

ALGOS = ("lrs-pnp", "lrs-pnp-dip", "svt-only", "sparse-only", "dip-only")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsinpaint",
                                     description="Hyperspectral inpainting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic low-rank cube")
    p.add_argument("--spec", help="experiment config JSON (synth section)")
    p.add_argument("--out", required=True)
    for name in ("rows", "cols", "bands", "rank", "seed"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--smoothness", type=float)

    p = sub.add_parser("degrade", help="mask pixels and add Gaussian noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--fraction", type=float, default=0.25)
    p.add_argument("--sigma", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", default="random-pixels",
                   choices=("random-pixels", "dead-lines", "stripes"))

    p = sub.add_parser("learn-dict", help="learn a dictionary from the degraded cube")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--atoms", type=int, required=True)
    p.add_argument("--sparsity", type=int, default=8)
    p.add_argument("--sweeps", type=int, default=15)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--config", help="experiment config JSON (patch_scheme section)")

    p = sub.add_parser("inpaint", help="reconstruct the missing pixels")
    p.add_argument("--algo", required=True, choices=ALGOS)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--dict", dest="dictionary")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--gt", help="ground truth cube (adds quality to the trace/report)")
    p.add_argument("--seed", type=int, help="override the solver seed")
    p.add_argument("--runs", type=int, default=1,
                   help="repeat with seeds seed..seed+runs-1 and report mean/std")

    p = sub.add_parser("eval", help="quality report between two cubes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--peak", type=float, default=1.0)

    return parser


def _require_cube(path) -> HsiCube:
    cube = read_cube(path)
    if not isinstance(cube, HsiCube):
        raise HsiError("bad-config", f"{path}: expected a reflectance cube, got a mask")
    return cube


def _require_mask(path) -> MaskCube:
    mask = read_cube(path)
    if not isinstance(mask, MaskCube):
        raise HsiError("bad-config", f"{path}: expected a mask (u8 container)")
    return mask


def _cmd_synth(args) -> int:
    spec = (load_experiment_config(args.spec).synth if args.spec
            else default_experiment().synth)
    overrides = {}
    for name in ("rows", "cols", "bands", "rank", "seed"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if args.smoothness is not None:
        overrides["abundance_smoothness"] = args.smoothness
    spec = replace(spec, **overrides) if overrides else spec
    write_cube(args.out, synth_cube(spec))
    return 0


def _cmd_degrade(args) -> int:
    x = _require_cube(args.input)
    spec = DegradeSpec(mask_kind=args.kind.replace("-", "_"),
                       missing_fraction=args.fraction,
                       noise_sigma=args.sigma, seed=args.seed)
    y, m = degrade(x, spec)
    write_cube(args.out, y)
    write_cube(args.mask, m)
    return 0


def _cmd_learn_dict(args) -> int:
    y = _require_cube(args.input)
    m = _require_mask(args.mask)
    scheme = (load_experiment_config(args.config).scheme if args.config
              else default_experiment().scheme)
    patches = extract_patches(y, scheme)
    weights = extract_patches(m, scheme)
    phi = learn_ksvd(patches, weights, atoms=args.atoms, sparsity=args.sparsity,
                     iters=args.sweeps, seed=args.seed,
                     patch_shape=scheme.patch_shape(y.dims))
    write_cube(args.out, HsiCube(phi.data[:, :, None]))
    return 0


def _load_dictionary(path) -> Dictionary:
    cube = _require_cube(path)
    if cube.bands != 1:
        raise HsiError("bad-config", f"{path}: dictionary container must have one band")
    # f32 storage perturbs the unit norms at the 1e-8 level; restore them.
    return Dictionary(cube.values[:, :, 0], renormalize=True)


def _cmd_inpaint(args) -> int:
    exp = load_experiment_config(args.config) if args.config else default_experiment()
    cfg = config_for_algo(args.algo, exp.solver)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    y = _require_cube(args.input)
    m = _require_mask(args.mask)
    gt = _require_cube(args.gt) if args.gt else None
    phi = None
    if cfg.sparse_enabled:
        if not args.dictionary:
            raise HsiError("bad-config", f"--dict is required for --algo {args.algo}")
        phi = _load_dictionary(args.dictionary)
    runs = args.runs
    if runs < 1:
        raise HsiError("bad-config", "--runs must be >= 1")
    if runs > 1 and gt is None:
        raise HsiError("bad-config", "--runs > 1 needs --gt to aggregate quality")

    results = []
    first_x = first_trace = None
    for i in range(runs):
        run_cfg = replace(cfg, seed=cfg.seed + i)
        net = (DipNet(y.bands, run_cfg.dip_channels, seed=run_cfg.seed)
               if run_cfg.u_prior == "dip" else None)
        x, trace = solve(y, m, phi, exp.scheme, exp.denoiser, run_cfg,
                         net=net, ground_truth=gt)
        if i == 0:
            first_x, first_trace = x, trace
        if gt is not None:
            rep = quality_report(x, gt)
            results.append({"seed": run_cfg.seed, "mpsnr": rep.mpsnr,
                            "mssim": rep.mssim})

    write_cube(args.out, first_x)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for record in first_trace:
                fh.write(json.dumps(record) + "\n")
    summary = {"algo": args.algo, "runs": runs, "iterations": len(first_trace)}
    if results:
        mp = np.array([r["mpsnr"] for r in results])
        ms = np.array([r["mssim"] for r in results])
        summary.update({
            "mpsnr_mean": float(mp.mean()), "mpsnr_std": float(mp.std()),
            "mssim_mean": float(ms.mean()), "mssim_std": float(ms.std()),
            "per_run": results,
        })
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    a = _require_cube(args.a)
    b = _require_cube(args.b)
    print(quality_report(a, b, peak=args.peak).to_json())
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "degrade": _cmd_degrade,
    "learn-dict": _cmd_learn_dict,
    "inpaint": _cmd_inpaint,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except HsiError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error[svd-failure]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
