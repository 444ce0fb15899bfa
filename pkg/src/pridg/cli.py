"""Command-line entry points: gen-data, train, fewshot, eval, report, experiment."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .augment import default_bank
from .evaluate import TEST_PRESETS, config_hash, eval_accuracy, eval_suite, make_report, parse_report
from .model import DgModel, ModelConfig
from .sim import PRESETS, ScenarioParams, default_roster, load_dataset, load_roster, make_dataset, normalization_scale, save_dataset, save_roster
from .train import TrainConfig, fewshot_finetune, select_per_class, train

log = logging.getLogger("pridg")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _roster_near(checkpoint: Path, explicit: str | None):
    if explicit:
        return load_roster(explicit)
    candidate = checkpoint.parent / "roster.json"
    return load_roster(candidate) if candidate.exists() else default_roster()


def cmd_gen_data(args) -> int:
    if args.scenario == "custom":
        if None in (args.rho_r, args.rho_m, args.rho_n):
            raise SystemExit("--scenario custom needs --rho-r, --rho-m and --rho-n")
        scenario = ScenarioParams(args.rho_r, args.rho_m, args.rho_n)
    else:
        scenario = PRESETS[args.scenario]
    roster = load_roster(args.roster) if args.roster else default_roster()
    ds = make_dataset(roster, scenario, args.n_per_class, args.seq_len, seed=args.seed)
    save_dataset(ds, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    out = Path(args.out)
    cfg.seq_len = ds.seq_len
    roster = ds.roster or default_roster()
    bank = default_bank(cfg.seed, k=cfg.n_generators, ranges={k: tuple(v) for k, v in cfg.ranges.items()})
    mcfg = ModelConfig(seq_len=ds.seq_len, scale=normalization_scale(roster), n_classes=len(roster), n_domains=bank.n_domains)
    out.mkdir(parents=True, exist_ok=True)
    save_roster(roster, out / "roster.json", ds.roster_version)
    (out / "train_config.json").write_text(cfg.to_json() + "\n")
    cfg.checkpoint_dir = str(out)
    _, stats = train(DgModel(mcfg, seed=cfg.seed), ds, bank, cfg)
    log.info("final train accuracy %.4f", stats.train_acc[-1])
    return 0


def cmd_fewshot(args) -> int:
    ckpt = Path(args.checkpoint)
    model, manifest = DgModel.load(ckpt)
    cfg = TrainConfig.from_dict(manifest["train_config"]) if "train_config" in manifest else TrainConfig()
    cfg.checkpoint_dir = None
    target = load_dataset(args.target)
    source = load_dataset(args.source) if args.source else None
    ns = _int_list(args.n)
    # selections are nested across n, so the rows left after the largest n are unseen by every run
    _, held_out = select_per_class(target, max(ns, default=0), seed=[cfg.seed, 0xF5])
    test = target.subset(held_out)
    roster = target.roster or _roster_near(ckpt, None)
    curve = {}
    for n in sorted(set([0, *ns])):
        tuned = fewshot_finetune(model, target, n, cfg, source=source)
        curve[n] = eval_accuracy(tuned, test, roster).overall_acc
        log.info("n=%d accuracy %.4f", n, curve[n])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fewshot.json").write_text(json.dumps({"model": {str(n): a for n, a in curve.items()}}, indent=1) + "\n")
    # merge into results already written to the same directory by `eval`
    metrics, fewshot, provenance = parse_report(out) if (out / "results.json").exists() else ({}, {}, {})
    fewshot["model"] = curve
    provenance = {**provenance, "fewshot_checkpoint": str(ckpt), "fewshot_target": str(args.target)}
    make_report(metrics, fewshot, out, provenance)
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    model, manifest = DgModel.load(ckpt)
    roster = _roster_near(ckpt, args.roster)
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    unknown = [p for p in presets if p not in TEST_PRESETS]
    if unknown:
        raise SystemExit(f"unknown presets {unknown}; choose from {', '.join(TEST_PRESETS)}")
    suite = eval_suite(model, presets, roster, args.n_per_class, args.seed, model.config.seq_len)
    provenance = {
        "checkpoint": ckpt.name,
        "model_config_hash": config_hash(manifest["model"]),
        "eval_seed": args.seed,
        "n_per_class": args.n_per_class,
    }
    make_report({args.name: suite}, None, args.out, provenance)
    return 0


def cmd_report(args) -> int:
    src = Path(args.inp)
    metrics, fewshot, provenance = parse_report(src)
    extra = src / "fewshot.json"
    if extra.exists():
        for name, curve in json.loads(extra.read_text()).items():
            fewshot[name] = {int(n): a for n, a in curve.items()}
    paths = make_report(metrics, fewshot, args.out, provenance)
    print(paths["report"].read_text(), end="")
    return 0


def cmd_experiment(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig(
        seeds=tuple(_int_list(args.seeds)),
        n_train_per_class=args.n_train,
        n_test_per_class=args.n_test,
        epochs=args.epochs,
    )
    metrics, curve, _ = run_experiment(cfg, args.out)
    print((Path(args.out) / "report.md").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pridg", description="PRI emitter recognition under changing noise scenes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate a labeled PRI dataset")
    g.add_argument("--scenario", choices=["train", "p1", "p2", "p3", "p4", "custom"], default="train")
    g.add_argument("--rho-r", type=float)
    g.add_argument("--rho-m", type=float)
    g.add_argument("--rho-n", type=float)
    g.add_argument("--n-per-class", type=int, default=500)
    g.add_argument("--seq-len", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--roster", help="roster JSON (default: bundled roster)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fewshot", help="fine-tune with n labeled target samples per class")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--target", required=True)
    f.add_argument("--source", help="source dataset mixed into fine-tuning batches")
    f.add_argument("--n", default="1,2,5,10,20")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fewshot)

    e = sub.add_parser("eval", help="score a checkpoint on fresh test scenes")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--presets", default="p1,p2,p3,p4")
    e.add_argument("--n-per-class", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--roster")
    e.add_argument("--name", default="model", help="method name in the tables")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="re-render report files from a results directory")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    x = sub.add_parser("experiment", help="DG vs. ERM over several seeds, with the few-shot curve")
    x.add_argument("--seeds", default="0,1,2")
    x.add_argument("--n-train", type=int, default=300)
    x.add_argument("--n-test", type=int, default=200)
    x.add_argument("--epochs", type=int, default=30)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
