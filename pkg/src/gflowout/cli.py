"""Command-line entry point.

Exit codes: 0 ok, 2 configuration, 3 numeric abort, 4 checkpoint,
5 enumeration guard, 6 gradient check failure.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import checkpoint
from .backbone import BackboneNet
from .checks import PATHS, CHECKS, random_instance
from .config import (config_hash, make_dataset, make_deformation, parse_config_text,
                     split_dataset, to_run_config)
from .data import apply_deformation
from .inference import ood_scores, predictive, uncertainty
from .metrics import accuracy, aupr, auroc
from .numeric import SeededRng
from .oracle import EnumerationGuardError, MaskSpace, exact_target, tv_to_target
from .policies import IdPolicy, PolicyBundle
from .trainer import HISTORY_COLUMNS, ConfigError, NumericAbort, fit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_GUARD, EXIT_GRADCHECK = 0, 2, 3, 4, 5, 6
ENUMCHECK_MAX_UNITS = 12

log = logging.getLogger("gflowout")


class CliExit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def model_params(backbone, policy):
    out = {f"backbone.{k}": v for k, v in backbone.params.items()}
    if policy is not None:
        for k, v in sorted(policy.parameters().items()):
            out[f"policy.{k}"] = v
    return out


def restore_model(values, params):
    """Rebuild backbone and policy from checkpoint sections."""
    ws = sorted((int(k[len("backbone.w"):]), v) for k, v in params.items()
                if k.startswith("backbone.w"))
    dims = [ws[0][1].shape[1]] + [w.shape[0] for _, w in ws]
    backbone = BackboneNet(dims)
    cfg = to_run_config(values)
    policy = None
    if cfg.method == "gflowout":
        hidden = params["policy.z.w1"].shape[0]
        policy = PolicyBundle(dims, hidden=hidden, temperature=cfg.temperature,
                              epsilon=cfg.epsilon,
                              with_flows=any(k.startswith("policy.f") for k in params))
    elif cfg.method == "id-gflowout":
        policy = IdPolicy(dims, cfg.temperature, cfg.epsilon)
    for k, v in model_params(backbone, policy).items():
        if k not in params:
            raise CliExit(EXIT_CHECKPOINT, f"checkpoint lacks section {k!r}")
        if params[k].shape != v.shape:
            raise CliExit(EXIT_CHECKPOINT, f"section {k!r} has shape {params[k].shape}")
        v[...] = params[k]
    return cfg, backbone, policy


def load_checkpoint(path):
    try:
        text, params = checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise CliExit(EXIT_CHECKPOINT, f"{path}: {exc}") from None
    except OSError as exc:
        raise CliExit(EXIT_CHECKPOINT, str(exc)) from None
    values = parse_config_text(text)
    cfg, backbone, policy = restore_model(values, params)
    return values, cfg, backbone, policy


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def _with_seed(text, seed):
    lines = [l for l in text.splitlines() if l.split("#", 1)[0].split("=", 1)[0].strip() != "seed"]
    return "\n".join(lines + [f"seed = {seed}"]) + "\n"


def run_train(config_text, out_dir):
    values = parse_config_text(config_text)
    cfg = to_run_config(values)
    dataset = make_dataset(values["dataset"])
    train, val, _ = split_dataset(dataset)
    os.makedirs(out_dir, exist_ok=True)
    result = fit(cfg, train, val)
    checkpoint.save(os.path.join(out_dir, "model.gfo"), config_text,
                    model_params(result.state.backbone, result.state.policy))
    with open(os.path.join(out_dir, "history.csv"), "w", newline="") as f:
        f.write(history_csv(result.history))
    meta = {"seed": cfg.seed, "config": values, "config_sha256": config_hash(config_text),
            "best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc,
            "n_train": len(train), "created_unix": time.time()}
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True, default=list)
    return result


def _train_replica(args):
    text, out_dir = args
    run_train(text, out_dir)
    return out_dir


def cmd_train(args):
    with open(args.config) as f:
        text = f.read()
    parse_config_text(text)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        jobs = [(_with_seed(text, s), os.path.join(args.out, f"seed_{s}")) for s in seeds]
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            for d in pool.map(_train_replica, jobs):
                print(d)
        return
    result = run_train(text, args.out)
    print(json.dumps({"best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc}))


def _m_list(s):
    return [int(v) for v in str(s).split(",") if v]


def _ce(probs, y):
    return float(-np.mean(np.log(np.clip(probs[np.arange(y.size), y], 1e-300, None))))


def cmd_eval(args):
    values, cfg, backbone, policy = load_checkpoint(args.checkpoint)
    test = split_dataset(make_dataset(args.dataset or values["dataset"]))[2]
    specs = args.deformation or [values.get("deformation", "none")]
    rows = []
    for spec in specs:
        d = make_deformation(spec)
        deformed = test if d is None else apply_deformation(test, d)
        for m in _m_list(args.M):
            # both passes draw the same masks so the two accuracies are paired
            clean = predictive(backbone, policy, test.x, m, cfg.method, SeededRng(args.seed),
                               cfg.dropout_rate)
            shifted = predictive(backbone, policy, deformed.x, m, cfg.method, SeededRng(args.seed),
                                 cfg.dropout_rate)
            rows.append({"deformation": spec, "M": m,
                         "clean_acc": accuracy(clean.mean_probs, test.y),
                         "deformed_acc": accuracy(shifted.mean_probs, deformed.y),
                         "clean_ce": _ce(clean.mean_probs, test.y),
                         "mean_ce": _ce(shifted.mean_probs, deformed.y)})
    _emit({"method": cfg.method, "rows": rows}, args.out)


def cmd_ood(args):
    values, cfg, backbone, policy = load_checkpoint(args.checkpoint)
    x_in = split_dataset(make_dataset(args.in_dist or values["dataset"]))[2]
    x_out = split_dataset(make_dataset(args.ood))[2]
    scores, labels = ood_scores(backbone, policy, x_in.x, x_out.x, args.M, args.metric,
                                cfg.method, SeededRng(args.seed), dropout_rate=cfg.dropout_rate)
    _emit({"metric": args.metric, "M": args.M, "auroc": auroc(scores, labels),
           "aupr": aupr(scores, labels), "n_in": len(x_in), "n_ood": len(x_out)}, args.out)


def cmd_enumcheck(args):
    values, cfg, backbone, policy = load_checkpoint(args.checkpoint)
    if backbone.n_maskable > ENUMCHECK_MAX_UNITS:
        raise CliExit(EXIT_GUARD, f"{backbone.n_maskable} maskable units exceed {ENUMCHECK_MAX_UNITS}")
    if not isinstance(policy, PolicyBundle):
        raise CliExit(EXIT_CONFIG, "enumcheck needs a gflowout checkpoint")
    ds = make_dataset(args.fixture or values["dataset"])
    n = min(args.probes, len(ds))
    reward = cfg.reward()
    probes = []
    for i in range(n):
        x, y = ds.x[i:i + 1], ds.y[i:i + 1]
        tv = float(tv_to_target(policy, backbone, policy, x, y, reward)[0])
        _, log_z = exact_target(backbone, policy, x, y, reward)
        learned = float(policy.log_partition(x, y)[0])
        probes.append({"probe": i, "tv": tv, "logZ_learned": learned, "logZ_exact": log_z,
                       "logZ_rel_err": abs(learned - log_z) / abs(log_z) if log_z else float("inf")})
    _emit({"probes": probes, "mean_tv": float(np.mean([p["tv"] for p in probes])),
           "mean_logZ_rel_err": float(np.mean([p["logZ_rel_err"] for p in probes]))}, args.out)


def cmd_gradcheck(args):
    with open(args.config) as f:
        values = parse_config_text(f.read())
    cfg = to_run_config(values)
    ds = make_dataset(values["dataset"])
    dims = (ds.x.shape[1], *cfg.hidden, ds.n_classes)
    report, failed = {}, None
    for path in PATHS:
        worst, kinks = None, 0
        for i in range(args.instances):
            inst = random_instance(cfg.seed + i, dims, hidden=args.hidden, batch=4)
            rep = CHECKS[path](*inst, corrupt=(args.fault_inject == path))
            kinks += rep.n_kinks
            if worst is None or rep.max_rel_error > worst.max_rel_error:
                worst = rep
        ok = worst.passed(args.tol)
        report[path] = {"max_rel_error": worst.max_rel_error, "worst_param": worst.worst_param,
                        "worst_index": list(worst.worst_index), "passed": ok,
                        "kinks": kinks}
        if not ok and failed is None:
            failed = path
    _emit({"paths": report, "tolerance": args.tol, "passed": failed is None}, args.out)
    if failed:
        r = report[failed]
        raise CliExit(EXIT_GRADCHECK, f"gradient check failed on {failed}: {r['worst_param']}"
                      f"{tuple(r['worst_index'])} rel err {r['max_rel_error']:.3e}")


def cmd_train_fixture(args):
    from .fixtures import enumerable_fixture, train_fixture_policy

    fx = enumerable_fixture(args.fixture_seed)
    policy, losses = train_fixture_policy(fx, steps=args.steps, seed=args.seed)
    text = (f"method = gflowout\nlayers = {','.join(map(str, fx.backbone.mask_dims))}\n"
            f"dataset = fixture:seed={args.fixture_seed},probes={len(fx.y)}\n"
            f"temperature = {policy.temperature}\nepsilon = {policy.epsilon}\nseed = {args.seed}\n")
    os.makedirs(args.out, exist_ok=True)
    checkpoint.save(os.path.join(args.out, "model.gfo"), text, model_params(fx.backbone, policy))
    with open(os.path.join(args.out, "tb_loss.csv"), "w") as f:
        f.write("step,tb_loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(losses)))
    print(json.dumps({"final_tb_loss": float(losses[-100:].mean())}))


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    print(text)


def build_parser():
    p = argparse.ArgumentParser(prog="gflowout", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config")
    t.add_argument("--out", required=True)
    t.add_argument("--seeds", help="comma-separated seeds, one replica per seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="clean and deformed accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--deformation", action="append")
    e.add_argument("--M", default="20")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("ood", help="AUROC/AUPR of uncertainty-based OOD detection")
    o.add_argument("checkpoint")
    o.add_argument("--in-dist", dest="in_dist")
    o.add_argument("--ood", required=True)
    o.add_argument("--metric", choices=("ds", "entropy"), default="ds")
    o.add_argument("--M", type=int, default=20)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")
    o.set_defaults(func=cmd_ood)

    c = sub.add_parser("enumcheck", help="exact TV and log Z error on enumerable probes")
    c.add_argument("checkpoint")
    c.add_argument("--fixture")
    c.add_argument("--probes", type=int, default=8)
    c.add_argument("--out")
    c.set_defaults(func=cmd_enumcheck)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradient paths")
    g.add_argument("config")
    g.add_argument("--instances", type=int, default=2)
    g.add_argument("--hidden", type=int, default=32)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--fault-inject", choices=PATHS, help=argparse.SUPPRESS)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("train-fixture", help="train the policy of the enumerable fixture")
    f.add_argument("--out", required=True)
    f.add_argument("--steps", type=int, default=5000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--fixture-seed", type=int, default=2)
    f.set_defaults(func=cmd_train_fixture)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericAbort as exc:
        print(f"error: numeric abort in {exc.term}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EnumerationGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
