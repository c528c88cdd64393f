"""Command-line entry point: ``deconet {datagen,train,acf,bounds,verify}``."""

import argparse
import contextlib
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bounds, data, network as net, verify
from .acf import AcfProblem, acf_solve
from .config import RunConfig, int_list, parse_value
from .estimators import make_schedule
from .linalg import read_dmat, spectral_value, write_dmat
from .operators import AnalysisOperator, build_operator, init_learnable

logger = logging.getLogger("deconet")


class CliError(Exception):
    pass


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_text(path, text):
    with atomic_path(path) as tmp:
        tmp.write_text(text)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_operator(path, W, meta):
    with atomic_path(path) as tmp:
        write_dmat(tmp, W)
    write_json(Path(str(path) + ".json"), meta)


def prepare_out(out, force):
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kw = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        kw[key.strip()] = parse_value(key.strip(), raw)
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out"] = args.out
    for name in ("dataset", "L"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    return cfg.with_overrides(**kw)


def _out_dir(cfg, default):
    return cfg.out if cfg.out is not None else default


def _dataset(cfg):
    if cfg.dataset is None:
        raise CliError("no dataset given (use --dataset or [data] dataset)")
    if not (Path(cfg.dataset) / "meta.json").exists():
        raise CliError(f"dataset {cfg.dataset} not found")
    return data.load_dataset(cfg.dataset)


def _decoder_config(cfg, ds):
    sch = make_schedule(cfg.schedule, cfg.L, cfg.mu, cfg.alpha, cfg.beta, cfg.L_tilde)
    B_out = ds.B_out if cfg.B_out == "auto" else float(cfg.B_out)
    eps = ds.eps if cfg.eps == "auto" else float(cfg.eps)
    return net.DecoderConfig(sch, B_out, eps)


def cmd_datagen(cfg, force=False):
    out = prepare_out(_out_dir(cfg, "dataset"), force)
    ds = data.make_synthetic(cfg.n, cfg.m, cfg.s_train, cfg.s_test, cfg.noise_std, cfg.seed)
    with atomic_path(out / "X.dmat") as t:
        write_dmat(t, ds.X)
    with atomic_path(out / "Y.dmat") as t:
        write_dmat(t, ds.Y)
    with atomic_path(out / "A.dmat") as t:
        write_dmat(t, ds.A)
    meta = {
        "n": cfg.n, "m": cfg.m, "s": ds.s, "n_train": ds.n_train, "eps": ds.eps,
        "noise_std": ds.noise_std, "seed": cfg.seed, "B_in": ds.B_in, "B_out": ds.B_out,
        "A_path": "A.dmat", "config_hash": cfg.hash(),
    }
    write_json(out / "meta.json", meta)
    print(f"eps={ds.eps!r} B_in={ds.B_in!r} B_out={ds.B_out!r}")
    return out


def cmd_train(cfg, force=False):
    ds = _dataset(cfg)
    out = prepare_out(_out_dir(cfg, "run"), force)
    X_tr, Y_tr = ds.train()
    X_te, Y_te = ds.test()
    dcfg = _decoder_config(cfg, ds)
    W0 = init_learnable(ds.X.shape[0], cfg.N, cfg.init, cfg.seed, cfg.init_a, cfg.init_b).W
    opts = net.TrainOptions(lr=cfg.lr, batch=cfg.batch, patience=cfg.patience,
                            max_epochs=cfg.max_epochs, seed=cfg.seed, lambda_cap=cfg.lambda_cap)
    write_text(out / "config.ini", cfg.to_ini())
    partial = out / "metrics.csv.partial"
    with open(partial, "w") as fh:
        fh.write(",".join(net.METRIC_FIELDS) + "\n")

        def emit(row):
            fh.write(",".join(str(row[k]) if k == "epoch" else repr(float(row[k]))
                              for k in net.METRIC_FIELDS) + "\n")
            fh.flush()

        try:
            res = net.train(X_tr, Y_tr, X_te, Y_te, ds.A, dcfg, W0, opts, on_epoch=emit)
        except net.TrainingDivergedError:
            fh.close()
            os.replace(partial, out / "metrics.csv")
            raise
    os.replace(partial, out / "metrics.csv")
    save_operator(out / "W.dmat", res.W, {
        "kind": "learnable", "n": res.W.shape[1], "N": res.W.shape[0], "epoch": res.best_epoch,
        "seed": cfg.seed, "config_hash": cfg.hash(),
    })
    best = res.history[res.best_epoch - 1]
    summary = {
        "config_hash": cfg.hash(), "best_epoch": res.best_epoch, "epochs_run": len(res.history),
        "best": best, "B_out": dcfg.B_out, "eps": dcfg.eps,
    }
    write_json(out / "summary.json", summary)
    print(f"best epoch {res.best_epoch}: test_mse={best['test_mse']!r} ege={best['ege']!r}")
    return out


def _operator(spec, n):
    if spec in ("haar", "haar_redundant", "tv", "finite_difference"):
        return build_operator(spec, n).W
    path = Path(spec)
    if not path.exists():
        raise CliError(f"operator {spec!r} is neither haar, tv nor an existing file")
    if Path(str(path) + ".json").exists():
        return AnalysisOperator.load(path).W
    return read_dmat(path)


def cmd_acf(cfg, force=False, operator=None, iters=None):
    ds = _dataset(cfg)
    iters = cfg.acf_iters if iters is None else iters
    if iters < 1:
        raise CliError("iters must be >= 1")
    op = cfg.acf_operator if operator is None else operator
    W = _operator(op, ds.X.shape[0])
    eps = ds.eps if cfg.eps == "auto" else float(cfg.eps)
    X_te, Y_te = ds.test()
    res = acf_solve(AcfProblem(ds.A, W, Y_te, cfg.mu, eps), iters)
    mse = float(np.mean(np.sum((res.x - X_te) ** 2, axis=0)))
    result = {
        "config_hash": cfg.hash(), "operator": op, "iters": iters, "mu": cfg.mu, "eps": eps,
        "test_mse": mse, "objective": res.objective.tolist(),
        "analysis_l1": res.analysis_l1.tolist(), "residual": res.residual.tolist(),
    }
    out = Path(_out_dir(cfg, "."))
    name = f"acf_{Path(op).stem}.json"
    if (out / name).exists() and not force:
        raise CliError(f"{out / name} exists; pass --force to overwrite")
    write_json(out / name, result)
    print(f"ACF[{op}] test_mse={mse!r}")
    return out / name


def cmd_bounds(cfg, force=False, checkpoint=None):
    if cfg.dataset is not None:
        ds = _dataset(cfg)
        A = ds.A
        X_tr, Y_tr = ds.train()
    else:
        ds = data.make_synthetic(cfg.n, cfg.m, cfg.s_train, 1, cfg.noise_std, cfg.seed)
        A = ds.A
        X_tr, Y_tr = ds.train()
    if checkpoint is not None:
        lam = spectral_value(read_dmat(checkpoint))
    else:
        lam = cfg.lam if cfg.lam is not None else 1.0
    B_in, B_out = data.estimate_bounds_constants(X_tr, Y_tr)
    sch = make_schedule(cfg.schedule, cfg.L, cfg.mu, cfg.alpha, cfg.beta, cfg.L_tilde)
    bi = bounds.BoundInputs(lam, spectral_value(A), sch, cfg.N, A.shape[1], A.shape[0],
                            X_tr.shape[1], float(np.linalg.norm(Y_tr)), B_in, B_out, cfg.delta)
    out = prepare_out(_out_dir(cfg, "bounds"), force)
    rep = bounds.bound_report(bi)
    rep.inputs["config_hash"] = cfg.hash()
    write_text(out / "report.json", rep.to_json() + "\n")
    Ns, Ls, ss = int_list(cfg.sweep_N), int_list(cfg.sweep_L), int_list(cfg.sweep_s)
    if Ns or Ls or ss:
        grid = [(N, L, s) for N in (Ns or [cfg.N]) for L in (Ls or [cfg.L]) for s in (ss or [bi.s])]
        rows = bounds.scaling_curve(
            bi, grid, lambda L: make_schedule(cfg.schedule, L, cfg.mu, cfg.alpha, cfg.beta,
                                              cfg.L_tilde))
        write_text(out / "sweep.csv", bounds.rows_to_csv(rows, bounds.SWEEP_FIELDS))
    print(f"gamma={rep.gamma!r} K_L={rep.K_L_general!r} thm5={rep.gen_bound_thm5!r}")
    return out


def cmd_verify(cfg, force=False, families=None, trials=None):
    if cfg.L < 1:
        raise CliError("L must be >= 1")
    names = tuple(families) if families else verify.DEFAULT_FAMILIES
    unknown = [f for f in names if f not in verify.FAMILIES]
    if unknown:
        raise CliError(f"unknown families {unknown}")
    results = verify.run_families(names, seed=cfg.seed, trials=trials, L=min(cfg.L, 5))
    report = {
        "config_hash": cfg.hash(), "passed": all(r.passed for r in results),
        "families": [r.to_dict() for r in results],
    }
    if cfg.out is not None:
        out = Path(cfg.out)
        if (out / "verify.json").exists() and not force:
            raise CliError(f"{out / 'verify.json'} exists; pass --force to overwrite")
        write_json(out / "verify.json", report)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} trials={r.trials} "
              f"violations={r.violations} worst_ratio={r.worst_ratio:.4g}")
    return report


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key; may be repeated")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deconet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("datagen", parents=[common], help="generate a synthetic dataset")
    t = sub.add_parser("train", parents=[common], help="train DECONET on a dataset")
    t.add_argument("--dataset")
    a = sub.add_parser("acf", parents=[common], help="ACF baseline on the test split")
    a.add_argument("--dataset")
    a.add_argument("--operator", help="haar, tv or a DMAT operator file")
    a.add_argument("--iters", type=int)
    b = sub.add_parser("bounds", parents=[common], help="bound report and scaling sweep")
    b.add_argument("--dataset")
    b.add_argument("--checkpoint", help="trained W (DMAT) supplying Lambda")
    v = sub.add_parser("verify", parents=[common], help="randomised checks of the bounds")
    v.add_argument("--families", nargs="+", help=f"subset of {sorted(verify.FAMILIES)}")
    v.add_argument("--trials", type=int)
    v.add_argument("--L", type=int)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "datagen":
            cmd_datagen(cfg, args.force)
        elif args.command == "train":
            cmd_train(cfg, args.force)
        elif args.command == "acf":
            cmd_acf(cfg, args.force, args.operator, args.iters)
        elif args.command == "bounds":
            cmd_bounds(cfg, args.force, args.checkpoint)
        elif args.command == "verify":
            if not cmd_verify(cfg, args.force, args.families, args.trials)["passed"]:
                return 1
    except net.TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
