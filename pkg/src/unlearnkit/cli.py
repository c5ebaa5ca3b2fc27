"""Command-line front end: pretrain | select | attack | unlearn | continual | eval | sweep.

Every run consumes and produces only files named in its arguments; run
directories hold a resolved spec snapshot, a JSONL trace, the final
checkpoint and a result summary, so identical invocations reproduce
byte-identical artifacts.
"""

import argparse
import concurrent.futures
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import datasets as data_mod
from . import importance as importance_mod
from . import models as models_mod
from . import reports as reports_mod
from . import unlearn as unlearn_mod
from .errors import ArgumentError, ManifestError, NumericError, UnlearnkitError
from .optim import OptimConfig

SEED_ENV = "UNLEARNKIT_SEED"


def _default_seed(value):
    if value is not None:
        return int(value)
    return int(os.environ.get(SEED_ENV, "0"))


def _parse_kv(spec):
    out = {}
    for part in spec.split(","):
        if not part:
            continue
        key, _, val = part.partition("=")
        out[key.strip()] = val.strip()
    return out


def resolve_dataset(uri):
    """A dataset directory path, or a synthetic-source URI.

    synth-images:classes=10,per_class=500,side=32,channels=3,signal=0.35,
                 noise=0.12,style=0.0,seed=0[,template_seed=7]
    synth-blobs:classes=3,per_class=50,dim=8,spread=0.2,seed=0
    """
    if uri.startswith("synth-images:"):
        kv = _parse_kv(uri[len("synth-images:") :])
        return data_mod.make_synthetic_images(
            num_classes=int(kv.get("classes", 10)),
            per_class=int(kv.get("per_class", 100)),
            side=int(kv.get("side", 32)),
            channels=int(kv.get("channels", 3)),
            signal=float(kv.get("signal", 0.35)),
            noise=float(kv.get("noise", 0.12)),
            style=float(kv.get("style", 0.0)),
            label_noise=float(kv.get("label_noise", 0.0)),
            seed=int(kv.get("seed", 0)),
            template_seed=int(kv["template_seed"]) if "template_seed" in kv else None,
        )
    if uri.startswith("synth-blobs:"):
        kv = _parse_kv(uri[len("synth-blobs:") :])
        return data_mod.make_synthetic(
            num_classes=int(kv.get("classes", 3)),
            per_class=int(kv.get("per_class", 50)),
            dim=int(kv.get("dim", 8)),
            spread=float(kv.get("spread", 0.2)),
            seed=int(kv.get("seed", 0)),
        )
    path = Path(uri)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {uri}")
    return data_mod.load_dataset(path)


def _require_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _add_unlearn_flags(p):
    p.add_argument("--method", default="adv_imp", choices=list(unlearn_mod.METHODS))
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--lambda-adv", dest="lam_adv", type=float, default=None)
    p.add_argument("--lambda-imp", dest="lam_imp", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--batch-f", type=int, default=32)
    p.add_argument("--batch-adv", type=int, default=None)
    p.add_argument("--n-adv", type=int, default=20)
    p.add_argument("--eps", type=float, default=0.4)
    p.add_argument("--attack-lr", type=float, default=0.1)
    p.add_argument("--attack-steps", type=int, default=100)
    p.add_argument("--no-random-start", action="store_true")
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--target-policy", default="per_image", choices=["per_image", "per_example"])
    p.add_argument("--importance-on", default="logits", choices=["logits", "softmax"])
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--awp-eps", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=None)


def _unlearn_config(args, seed):
    attack_cfg = attack_mod.AttackConfig(
        epsilon=args.eps,
        step_size=args.attack_lr,
        iterations=args.attack_steps,
        random_start=not args.no_random_start,
        clamp_pixels=not args.no_clamp,
        seed=seed,
    )
    return unlearn_mod.UnlearnConfig(
        method=args.method,
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        lam=args.lam,
        lam_adv=args.lam_adv,
        lam_imp=args.lam_imp,
        max_epochs=args.max_epochs,
        batch_f=args.batch_f,
        batch_adv=args.batch_adv,
        n_adv=args.n_adv,
        attack=attack_cfg,
        target_policy=args.target_policy,
        importance_on=args.importance_on,
        gamma=args.gamma,
        awp_eps=args.awp_eps,
        seed=seed,
    )


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_trace(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_run_dir(out, runspec, result):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "runspec.json", runspec)
    if isinstance(result, list):  # continual: one sub-run per fragment
        summary = []
        for idx, res in enumerate(result):
            sub = out / f"fragment_{idx:02d}"
            sub.mkdir(exist_ok=True)
            _write_trace(sub / "trace.jsonl", res.trace)
            models_mod.save_checkpoint(res.state, sub / "final.ckpt")
            frag = {
                "epochs_run": res.epochs_run,
                "stop_reason": res.stop_reason,
                "final_d_f_accuracy": res.final_accuracy(),
            }
            _write_json(sub / "result.json", frag)
            summary.append(frag)
        models_mod.save_checkpoint(result[-1].state, out / "final.ckpt")
        _write_json(out / "result.json", {"fragments": summary, "method": result[-1].method, "mode": result[-1].mode})
    else:
        _write_trace(out / "trace.jsonl", result.trace)
        models_mod.save_checkpoint(result.state, out / "final.ckpt")
        _write_json(
            out / "result.json",
            {
                "epochs_run": result.epochs_run,
                "stop_reason": result.stop_reason,
                "method": result.method,
                "mode": result.mode,
                "final_d_f_accuracy": result.final_accuracy(),
            },
        )
    return out


def cmd_pretrain(args):
    ds = resolve_dataset(args.data)
    seed = _default_seed(args.seed)
    if args.arch == "mlp2":
        if len(ds.input_shape) != 1:
            raise ArgumentError("mlp2 expects flat input data")
        arch = models_mod.make_mlp2(ds.input_shape[0], ds.num_classes)
    else:
        side, _, channels = ds.input_shape
        arch = models_mod.make_cnn_s(ds.num_classes, side=side, channels=channels)
    state = models_mod.init_state(arch, ds.num_classes, seed, metadata={"data": args.data})
    cfg = OptimConfig(
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        label_smoothing=args.label_smoothing,
        seed=seed,
    )
    state = models_mod.pretrain(state, ds, cfg)
    models_mod.save_checkpoint(state, args.out)
    print(json.dumps({"train_accuracy": state.metadata["pretrain"]["train_accuracy"], "out": args.out}))
    return 0


def cmd_select(args):
    ds = resolve_dataset(args.data)
    seed = _default_seed(args.seed)
    manifest = data_mod.select_forget_set(ds, args.k, args.mode, seed)
    data_mod.save_manifest(manifest, args.out)
    print(json.dumps({"k": len(manifest), "mode": manifest.mode, "out": args.out}))
    return 0


def cmd_attack(args):
    state = models_mod.load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    ds = resolve_dataset(args.data)
    manifest = data_mod.load_manifest(_require_file(args.manifest, "manifest"))
    d_f, _ = data_mod.split_remaining(ds, manifest)
    seed = _default_seed(args.seed)
    cfg = attack_mod.AttackConfig(
        epsilon=args.eps,
        step_size=args.attack_lr,
        iterations=args.attack_steps,
        random_start=not args.no_random_start,
        clamp_pixels=not args.no_clamp,
        seed=seed,
    )
    advset = attack_mod.generate_adversarial_set(state, d_f, args.n_adv, cfg, args.target_policy)
    attack_mod.save_adversarial_set(advset, args.out)
    print(json.dumps({"records": len(advset), "out": args.out}))
    return 0


def cmd_unlearn(args):
    state = models_mod.load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    ds = resolve_dataset(args.data)
    manifest = data_mod.load_manifest(_require_file(args.manifest, "manifest"))
    d_f, d_r = data_mod.split_remaining(ds, manifest)
    seed = _default_seed(args.seed)
    cfg = _unlearn_config(args, seed)
    report_on = {"d_r": d_r} if args.trace_remaining and len(d_r) else None

    adv_set = None
    if args.adv_set:
        adv_set = attack_mod.load_adversarial_set(_require_file(args.adv_set, "adversarial set"))
    omega_bar = None
    if args.importance:
        omega_bar = importance_mod.load_importance_map(_require_file(args.importance, "importance map"))

    if args.method == unlearn_mod.ORACLE:
        result = unlearn_mod.run_oracle(state, d_f, d_r, manifest, cfg, report_on=report_on)
    elif args.method == unlearn_mod.RAWP:
        result = unlearn_mod.run_rawp(state, d_f, cfg, report_on=report_on)
    else:
        result = unlearn_mod.run_unlearning(
            state, d_f, manifest, cfg, adv_set=adv_set, omega_bar=omega_bar, report_on=report_on
        )

    runspec = {
        "subcommand": "unlearn",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "manifest": args.manifest,
        "adv_set": args.adv_set,
        "importance": args.importance,
        "config": asdict(cfg),
        "out": str(args.out),
    }
    _write_run_dir(args.out, runspec, result)
    print(json.dumps({"stop_reason": result.stop_reason, "epochs_run": result.epochs_run, "out": str(args.out)}))
    return 0


def cmd_continual(args):
    state = models_mod.load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    ds = resolve_dataset(args.data)
    manifest = data_mod.load_manifest(_require_file(args.manifest, "manifest"))
    seed = _default_seed(args.seed)
    cfg = _unlearn_config(args, seed)
    results = unlearn_mod.run_continual(state, ds, manifest, args.k_cl, cfg)
    runspec = {
        "subcommand": "continual",
        "checkpoint": args.checkpoint,
        "data": args.data,
        "manifest": args.manifest,
        "k_cl": args.k_cl,
        "config": asdict(cfg),
        "out": str(args.out),
    }
    _write_run_dir(args.out, runspec, results)
    print(json.dumps({"fragments": len(results), "out": str(args.out)}))
    return 0


def cmd_eval(args):
    before = models_mod.load_checkpoint(_require_file(args.before, "checkpoint"))
    after = models_mod.load_checkpoint(_require_file(args.after, "checkpoint"))
    ds = resolve_dataset(args.data)
    manifest = data_mod.load_manifest(_require_file(args.manifest, "manifest"))
    d_f, d_r = data_mod.split_remaining(ds, manifest)
    d_test = resolve_dataset(args.test_data) if args.test_data else None
    metadata = {"run_id": args.run_id, "method": args.method_label}
    report = reports_mod.evaluate(
        before, after, d_f, d_r, d_test, manifest, max_examples=args.max_examples, metadata=metadata
    )
    path = reports_mod.emit_report(report, args.out)
    print(json.dumps({"report": str(path)}))
    return 0


def _sweep_task(task):
    """One sweep cell, importable so process pools can pick it up."""
    args = argparse.Namespace(**task["args"])
    cmd_unlearn(args)
    state_before = models_mod.load_checkpoint(task["args"]["checkpoint"])
    state_after = models_mod.load_checkpoint(str(Path(task["args"]["out"]) / "final.ckpt"))
    ds = resolve_dataset(task["args"]["data"])
    manifest = data_mod.load_manifest(task["args"]["manifest"])
    d_f, d_r = data_mod.split_remaining(ds, manifest)
    d_test = resolve_dataset(task["test_data"]) if task["test_data"] else None
    report = reports_mod.evaluate(
        state_before, state_after, d_f, d_r, d_test, manifest,
        metadata={"run_id": task["run_id"], "method": task["args"]["method"]},
    )
    reports_mod.emit_report(report, task["args"]["out"])
    row = {"run_id": task["run_id"], "method": task["args"]["method"], "k": len(manifest),
           "gamma": task["args"]["gamma"], "seed": task["args"]["seed"]}
    for split, vals in report.accuracies.items():
        row[f"{split}_before"] = vals["before"]
        row[f"{split}_after"] = vals["after"]
    return row


def cmd_sweep(args):
    _require_file(args.checkpoint, "checkpoint")
    ds = resolve_dataset(args.data)
    seed = _default_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ks = [int(v) for v in args.ks.split(",") if v]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    gammas = [float(v) for v in args.gammas.split(",") if v] if args.gammas else [args.gamma]
    for m in methods:
        if m not in unlearn_mod.METHODS:
            raise ArgumentError(f"unknown method {m}")

    tasks = []
    for k in ks:
        manifest = data_mod.select_forget_set(ds, k, args.mode, seed)
        manifest_path = out / f"manifest_k{k}.json"
        data_mod.save_manifest(manifest, manifest_path)
        for method in methods:
            for gamma in gammas if method == unlearn_mod.RAWP else [args.gamma]:
                run_id = f"{method}_k{k}_s{seed}"
                if method == unlearn_mod.RAWP and args.gammas:
                    run_id += f"_g{gamma}"
                sub = dict(vars(args))
                sub.update(
                    method=method,
                    gamma=gamma,
                    seed=seed,
                    manifest=str(manifest_path),
                    out=str(out / run_id),
                    adv_set=None,
                    importance=None,
                    trace_remaining=False,
                )
                for drop in ("ks", "methods", "gammas", "mode", "jobs", "test_data"):
                    sub.pop(drop, None)
                tasks.append({"args": sub, "run_id": run_id, "test_data": args.test_data})

    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]

    import csv

    columns = sorted({key for row in rows for key in row})
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"runs": len(rows), "out": str(out)}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="unlearnkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a reference classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", default="cnn_s", choices=["mlp2", "cnn_s"])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--label-smoothing", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("select", help="draw a forget manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", default=data_mod.MISCLASSIFY, choices=list(data_mod.MODES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("attack", help="generate the adversarial replay set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-adv", type=int, default=20)
    p.add_argument("--eps", type=float, default=0.4)
    p.add_argument("--attack-lr", type=float, default=0.1)
    p.add_argument("--attack-steps", type=int, default=100)
    p.add_argument("--no-random-start", action="store_true")
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--target-policy", default="per_image", choices=["per_image", "per_example"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("unlearn", help="run one unlearning method")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--adv-set", default=None)
    p.add_argument("--importance", default=None)
    p.add_argument("--trace-remaining", action="store_true")
    _add_unlearn_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("continual", help="unlearn a manifest in fragments")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k-cl", type=int, default=8)
    _add_unlearn_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_continual)

    p = sub.add_parser("eval", help="report accuracies, confusion, CKA")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--max-examples", type=int, default=512)
    p.add_argument("--run-id", default="")
    p.add_argument("--method-label", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of unlearning runs (k, method, gamma)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default=data_mod.MISCLASSIFY, choices=list(data_mod.MODES))
    p.add_argument("--ks", default="16")
    p.add_argument("--methods", default="neggrad,adv,adv_imp")
    p.add_argument("--gammas", default=None)
    p.add_argument("--test-data", default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_unlearn_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def _apply_config_file(parser, argv):
    """Load --config JSON (flag-name -> value) as subcommand defaults.

    Explicit command-line flags still win; the config file only replaces
    the built-in defaults.
    """
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        parser.error("--config requires a path")
    path = Path(argv[at + 1])
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = json.loads(path.read_text())
    overrides = {key.replace("-", "_"): value for key, value in doc.items()}
    for action in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in action._actions}
        action.set_defaults(**{k: v for k, v in overrides.items() if k in known})
    return argv[:at] + argv[at + 2 :]


def main(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(parser, argv)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFoundError", "message": str(exc)}), file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ArgumentError, ManifestError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except NumericError as exc:
        print(
            json.dumps({"error": "NumericError", "message": str(exc), "epoch": exc.epoch}),
            file=sys.stderr,
        )
        return 3
    except UnlearnkitError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
