"""Command-line front end.

Subcommands: generate | reduce | hsv | price | experiment.  Every command
is deterministic under a fixed seed/config; outputs carry provenance
headers (config hash, seed, version) and no timestamps, so reruns are
byte-identical regardless of the worker count.
"""

import argparse
import json
import os
import sys as _sys
from pathlib import Path


def _set_workers(workers):
    # must run before numba is first imported anywhere in the process
    if workers and workers > 0:
        os.environ["NUMBA_NUM_THREADS"] = str(workers)


EXIT_CODES = {
    "NearSingularProjection": 3,
    "RankDeficient": 4,
    "NumericalFailure": 5,
    "SingularKronecker": 6,
    "MemoryBudgetExceeded": 7,
    "GridMismatch": 8,
    "MissingGramian": 9,
    "UnstableSystem": 10,
    "UnstableIterate": 11,
    "SingularReducedOperator": 12,
    "StepTooCoarse": 13,
    "NotDiagonalModel": 14,
    "CapMissing": 15,
    "InsufficientPaths": 16,
    "IndefiniteInput": 17,
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="sdemor",
        description="Reduce linear stochastic asset-price models and price "
                    "Bermudan options on the reduced model.",
    )
    p.add_argument("--workers", type=int, default=0,
                   help="thread count for path simulation (0 = default)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a model instance and write "
                                        "the model file")
    g.add_argument("--config", help="experiment config JSON (model section "
                                    "is used)")
    g.add_argument("--name", choices=("basket", "maxcall"),
                   help="built-in configuration")
    g.add_argument("--seed", type=int, help="override the model seed")
    g.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("reduce", help="run the reduction sweep on a model "
                                      "file")
    r.add_argument("--model", required=True)
    r.add_argument("--nhat", required=True,
                   help="comma-separated reduced dimensions, e.g. 1,2,3")
    r.add_argument("--algorithm", choices=("finite", "infinite"),
                   default="finite")
    r.add_argument("--tol", type=float, default=1e-6)
    r.add_argument("--max-iter", type=int, default=200)
    r.add_argument("--grid", type=int, default=200)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--full-gramians", action="store_true", default=True)
    r.add_argument("--no-full-gramians", dest="full_gramians",
                   action="store_false")
    r.add_argument("--out", required=True)

    h = sub.add_parser("hsv", help="spectral reducibility diagnostics")
    h.add_argument("--model", required=True)
    h.add_argument("--out", required=True)

    c = sub.add_parser("price", help="price a Bermudan option on reduced "
                                     "models")
    c.add_argument("--model", required=True)
    c.add_argument("--reduced", required=True,
                   help="comma-separated reduced-model files")
    c.add_argument("--paths", type=int, default=100_000)
    c.add_argument("--eval-paths", type=int, default=0,
                   help="independent evaluation paths (0 = same as --paths)")
    c.add_argument("--dt", type=float, default=1.0 / 500.0)
    c.add_argument("--seed", type=int, default=1)
    c.add_argument("--dates", default="0,0.25,0.5,0.75,1.0")
    c.add_argument("--payoff", choices=("basket_call", "max_call"),
                   default="basket_call")
    c.add_argument("--rate", type=float, default=0.02,
                   help="discount rate of the payoff")
    c.add_argument("--basis-degree", type=int, default=4)
    c.add_argument("--single-pass", action="store_true",
                   help="skip the independent evaluation ensemble")
    c.add_argument("--dump-paths", action="store_true",
                   help="also write the reduced-state paths of the "
                        "regression ensemble (large)")
    c.add_argument("--out", required=True)

    e = sub.add_parser("experiment", help="one-command reproduction bundle")
    e.add_argument("--name", choices=("basket", "maxcall"), required=True)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--paths", type=int, default=0,
                   help="override regression path count")
    e.add_argument("--eval-paths", type=int, default=0)
    e.add_argument("--l2-paths", type=int, default=0)
    e.add_argument("--dt", type=float, default=0.0)
    e.add_argument("--nhat", default="",
                   help="override the reduced-dimension sweep")
    e.add_argument("--max-iter", type=int, default=0)
    e.add_argument("--out", required=True)
    return p


def _named_config(name, seed):
    from . import experiments as ex

    builder = {"basket": ex.basket_experiment_config,
               "maxcall": ex.maxcall_experiment_config}[name]
    return builder(seed)


def _config_from_json(path):
    from . import experiments as ex

    doc = json.loads(Path(path).read_text())
    return ex.ExperimentConfig(
        model=ex.ModelConfig(**doc["model"]),
        reduction=ex.ReductionConfig(
            **{**doc.get("reduction", {}),
               "nhat_list": tuple(doc.get("reduction", {})
                                  .get("nhat_list", (1, 2, 3, 4, 5)))}
        ),
        simulation=ex.SimulationConfig(**doc.get("simulation", {})),
        pricing=ex.PricingConfig(
            **{**doc.get("pricing", {}),
               "dates": tuple(doc.get("pricing", {})
                              .get("dates", (0.0, 0.25, 0.5, 0.75, 1.0)))}
        ),
    )


def cmd_generate(args):
    from . import experiments as ex
    from . import modelio

    if args.config:
        config = _config_from_json(args.config)
    elif args.name:
        config = _named_config(args.name, args.seed or 0)
    else:
        raise SystemExit("generate needs --config or --name")
    model_cfg = config.model
    if args.seed is not None:
        from dataclasses import replace
        model_cfg = replace(model_cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sysm, z0 = ex.generate_instance(model_cfg)
    cfg_hash = modelio.config_hash(
        {"model": model_cfg.__dict__} | {"seed": model_cfg.seed}
    )
    modelio.save_system(sysm, out / "model.json", z0=z0,
                        seed=model_cfg.seed, cfg_hash=cfg_hash)
    print(f"wrote {out / 'model.json'}")
    return 0


def cmd_reduce(args):
    from . import experiments as ex
    from . import modelio

    sysm, z0 = modelio.load_system(args.model)
    nhats = tuple(int(s) for s in args.nhat.split(","))
    cfg = ex.ReductionConfig(
        nhat_list=nhats,
        algorithm="finite_horizon" if args.algorithm == "finite"
        else "infinite_horizon",
        tol=args.tol, max_iter=args.max_iter, grid=args.grid,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = modelio.config_hash(
        {"reduction": cfg.__dict__, "model": args.model}
    )
    meta = dict(seed=args.seed, cfg_hash=cfg_hash)
    results = ex.reduce_model(sysm, cfg, full_gramians=args.full_gramians)
    blocks = []
    rows = []
    for nhat, red, diag in results:
        modelio.save_reduced(red, out / f"reduced_nhat{nhat}.json", **meta)
        blocks.append(modelio.format_diagnostics(nhat, diag))
        rows.append((nhat, diag.terminal_cov_err[0],
                     diag.terminal_cov_err[1],
                     -1.0 if diag.bound_value is None else diag.bound_value))
    (out / "reduction_report.txt").write_text(
        "\n".join(modelio._header_lines(args.seed, cfg_hash))
        + "\n\n" + "\n\n".join(blocks) + "\n"
    )
    modelio.write_csv(out / "covariance_errors.csv",
                      ("nhat", "cov_err_primal", "cov_err_dual", "bound"),
                      rows, **meta)
    print(f"wrote {out / 'reduction_report.txt'}")
    return 0


def cmd_hsv(args):
    import numpy as np

    from . import experiments as ex
    from . import modelio

    sysm, _ = modelio.load_system(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = modelio.config_hash({"hsv": args.model})
    hsv = ex.hsv_report(sysm)
    meta = dict(seed=0, cfg_hash=cfg_hash)
    modelio.write_csv(
        out / "hsv.csv", ("index", "sigma", "eig_P", "eig_Q"),
        [(i + 1, hsv.hsv[i], hsv.eig_P[i], hsv.eig_Q[i])
         for i in range(hsv.hsv.shape[0])], **meta,
    )
    modelio.write_csv(
        out / "hsv_log10.csv", ("index", "log10_sigma"),
        [(i + 1, float(np.log10(max(hsv.hsv[i], 1e-300))))
         for i in range(hsv.hsv.shape[0])], **meta,
    )
    print(f"wrote {out / 'hsv.csv'}")
    return 0


def cmd_price(args):
    import numpy as np

    from . import modelio
    from .pricing import BasisSpec, ExerciseSpec, longstaff_schwartz, \
        pathwise_error_bound, polynomial_basis
    from .simulate import NoiseSpec, simulate_coupled_sweep
    from .experiments import initial_underlying
    from .linsys import InitialExpansion

    sysm, z0 = modelio.load_system(args.model)
    if z0 is None:
        z0 = InitialExpansion([1.0] * sysm.m)
    reds = [modelio.load_reduced(p) for p in args.reduced.split(",")]
    for red in reds:
        if red.n != sysm.n or red.q != sysm.q:
            raise SystemExit("model and reduced files are inconsistent")
    dates = np.array([float(s) for s in args.dates.split(",")])
    strike = initial_underlying(sysm, z0, args.payoff)
    spec = ExerciseSpec(dates=dates, rate=args.rate, strike=strike,
                        payoff_kind=args.payoff)
    noise = NoiseSpec(kind="brownian", K_M=sysm.K_M)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = modelio.config_hash({
        "price": {
            "paths": args.paths, "eval_paths": args.eval_paths,
            "dt": args.dt, "seed": args.seed, "dates": args.dates,
            "payoff": args.payoff, "rate": args.rate,
            "basis_degree": args.basis_degree,
            "single_pass": args.single_pass,
        }
    })
    meta = dict(seed=args.seed, cfg_hash=cfg_hash)
    m_eval = args.eval_paths or args.paths
    ens_reg = simulate_coupled_sweep(sysm, reds, noise, args.paths, args.dt,
                                     dates, args.seed, store_full=False,
                                     z0=z0.z0)
    ens_eval = None if args.single_pass else simulate_coupled_sweep(
        sysm, reds, noise, m_eval, args.dt, dates, args.seed + 1,
        store_full=True, z0=z0.z0,
    )
    rows = []
    lines = [f"strike = {strike:.12g}"]
    for i, red in enumerate(reds):
        basis = polynomial_basis(red.nhat, BasisSpec(args.basis_degree))
        eev = None if ens_eval is None else ens_eval[i]
        res = longstaff_schwartz(ens_reg[i], spec, basis, red.C,
                                 eval_ens=eev)
        bnd, bnd_se = (np.nan, np.nan)
        if eev is not None:
            bnd, bnd_se = pathwise_error_bound(eev, spec, sysm.C, red.C)
        rows.append((red.nhat, res.value, res.stderr, res.value_insample,
                     bnd, bnd_se))
        lines.append(
            f"nhat={red.nhat} value={res.value:.12g} "
            f"stderr={res.stderr:.12g} insample={res.value_insample:.12g} "
            f"bound={bnd:.12g} bound_stderr={bnd_se:.12g}"
        )
        lines.append(
            f"nhat={red.nhat} exercise_fractions="
            + " ".join(f"{f:.6g}" for f in res.exercise_fractions)
        )
    modelio.write_csv(
        out / "pricing.csv",
        ("nhat", "value", "stderr", "value_insample",
         "pathwise_bound", "pathwise_bound_stderr"),
        rows, **meta,
    )
    (out / "pricing_report.txt").write_text(
        "\n".join(modelio._header_lines(args.seed, cfg_hash)) + "\n"
        + "\n".join(lines) + "\n"
    )
    if args.dump_paths:
        for i, red in enumerate(reds):
            modelio.write_paths_csv(
                out / f"paths_nhat{red.nhat}.csv", ens_reg[i],
                which="reduced", **meta,
            )
    print(f"wrote {out / 'pricing.csv'}")
    return 0


def cmd_experiment(args):
    from dataclasses import replace

    from . import experiments as ex

    config = _named_config(args.name, args.seed)
    sim = config.simulation
    if args.paths:
        sim = replace(sim, M=args.paths)
    if args.eval_paths:
        sim = replace(sim, M_eval=args.eval_paths)
    if args.l2_paths:
        sim = replace(sim, M_l2=args.l2_paths)
    if args.dt:
        sim = replace(sim, dt=args.dt)
    config = replace(config, simulation=sim)
    if args.nhat:
        nhats = tuple(int(s) for s in args.nhat.split(","))
        config = replace(config,
                         reduction=replace(config.reduction,
                                           nhat_list=nhats))
    if args.max_iter:
        config = replace(config,
                         reduction=replace(config.reduction,
                                           max_iter=args.max_iter))
    ex.run_experiment(config, args.out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_workers(args.workers)
    if args.workers and args.workers > 0:
        import numba
        numba.set_num_threads(args.workers)
    from . import errors

    handlers = {
        "generate": cmd_generate,
        "reduce": cmd_reduce,
        "hsv": cmd_hsv,
        "price": cmd_price,
        "experiment": cmd_experiment,
    }
    try:
        return handlers[args.command](args)
    except errors.SdemorError as exc:
        name = type(exc).__name__
        print(f"error [{name}]: {exc}", file=_sys.stderr)
        return EXIT_CODES.get(name, 1)


if __name__ == "__main__":
    raise SystemExit(main())
