"""Command-line entry point.

Every command accepts ``--config FILE`` holding flat ``key=value`` lines
(keys are the long flag names with ``_`` for ``-``); explicit flags win over
the file, the file wins over built-in defaults. ``LIGHTPATH_SEED`` provides
the seed when ``--seed`` is not given. Failures print one JSON object on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import distill as kd
from . import downstream, graph, profile, ssl
from .encoder import EncoderConfig, EncoderModel, load_edge_embeddings
from .rng import stream

EXIT_ERROR = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in str(s).split(",") if x.strip()]


# name -> (type, default, help); None default means "required" for paths or "derived"
COMMON = {"config": (str, None, "key=value config file"), "seed": (int, None, "random seed (default: $LIGHTPATH_SEED)")}

OPTIONS: dict[str, dict[str, tuple]] = {
    "generate": {
        "grid": (str, "10x10", "grid size ROWSxCOLS"),
        "paths": (int, 1000, "number of paths"),
        "length": (int, 20, "edges per path"),
        "repeats": (int, 10, "walks per start vertex"),
        "sigma": (float, 0.2, "lognormal congestion noise on travel times"),
        "test_fraction": (float, 0.2, "fraction of paths tagged test"),
        "ranking_groups": (int, 0, "also write ranking candidate groups for this many paths"),
        "ranking_k": (int, 3, "alternatives per ranking group"),
        "out": (str, None, "output directory"),
    },
    "pretrain": {
        "dataset": (str, None, "path dataset file"),
        "out": (str, None, "checkpoint file"),
        "log": (str, None, "training log CSV (optional)"),
        "embeddings": (str, None, "edge embedding file id,v1..vd (optional)"),
        "max_len": (int, None, "longest path the encoder accepts (default: longest in dataset)"),
        "d_model": (int, 32, "model width"),
        "layers": (int, 2, "encoder layers"),
        "heads": (int, 2, "attention heads"),
        "d_ff": (int, 64, "feed-forward width"),
        "dec_layers": (int, 1, "decoder layers"),
        "freeze_embeddings": (_bool, False, "keep edge embeddings fixed (reconstruction targets never carry gradient)"),
        "gamma1": (float, 0.4, "reduction ratio of the first view"),
        "gamma2": (float, 0.8, "reduction ratio of the second view"),
        "momentum": (float, 0.99, "auxiliary encoder momentum"),
        "positive_mode": (str, "equation", "cross-network positives: equation or prose"),
        "batch": (int, 64, "minibatch size"),
        "epochs": (int, 400, "training epochs"),
        "warmup": (int, 40, "warmup epochs"),
        "lr": (float, 1e-3, "base learning rate"),
        "beta1": (float, 0.9, "AdamW beta1"),
        "beta2": (float, 0.95, "AdamW beta2"),
        "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    },
    "distill": {
        "teacher": (str, None, "pretrain checkpoint"),
        "dataset": (str, None, "path dataset file"),
        "out": (str, None, "student checkpoint file"),
        "log": (str, None, "training log CSV (optional)"),
        "student_layers": (int, 2, "student encoder layers"),
        "alpha": (float, 0.6, "weight of the global term"),
        "temperature": (float, 9.0, "distillation temperature"),
        "gamma": (float, 0.4, "reduction ratio of the shared view"),
        "sp": (str, "exp", "softening function: exp or softmax"),
        "batch": (int, 32, "minibatch size"),
        "epochs": (int, 50, "training epochs"),
        "warmup": (int, 5, "warmup epochs"),
        "lr": (float, 1e-3, "base learning rate"),
        "beta1": (float, 0.9, "AdamW beta1"),
        "beta2": (float, 0.95, "AdamW beta2"),
        "weight_decay": (float, 0.01, "AdamW decoupled weight decay"),
    },
    "embed": {
        "checkpoint": (str, None, "pretrain or distill checkpoint"),
        "dataset": (str, None, "path dataset file"),
        "out": (str, None, "output CSV path_id,v1..vd"),
        "gamma_eval": (float, 0.0, "reduction ratio applied before encoding"),
    },
    "eval": {
        "checkpoint": (str, None, "pretrain or distill checkpoint"),
        "dataset": (str, None, "labelled path dataset with split tags"),
        "task": (str, "travel_time", "travel_time or ranking"),
        "out": (str, None, "JSON report (default: stdout)"),
        "gamma_eval": (float, 0.0, "reduction ratio applied before encoding"),
        "n_trees": (int, 100, "boosting rounds"),
        "learning_rate": (float, 0.1, "boosting shrinkage"),
        "max_depth": (int, 3, "tree depth"),
        "min_samples_leaf": (int, 1, "minimum samples per leaf"),
    },
    "profile": {
        "table5": (_bool, False, "emit the N x gamma scalability grid"),
        "n": (_ints, "200", "path lengths N (comma separated)"),
        "gamma": (_floats, "0.0", "reduction ratios (comma separated)"),
        "layers": (int, 12, "encoder layers"),
        "heads": (int, 8, "attention heads"),
        "d_model": (int, 512, "model width"),
        "d_ff": (int, 1024, "feed-forward width"),
        "dec_layers": (int, 1, "decoder layers"),
        "vocab": (int, 1, "edge vocabulary size"),
        "batch": (int, 64, "batch size for the memory estimate"),
        "include_decoder": (_bool, True, "count the full-length decoder"),
        "out": (str, None, "CSV output (default: stdout)"),
        "json": (str, None, "JSON breakdown output (optional)"),
    },
}

TRAINING = {"generate", "pretrain", "distill"}
REQUIRED = {
    "generate": ("out",),
    "pretrain": ("dataset", "out"),
    "distill": ("teacher", "dataset", "out"),
    "embed": ("checkpoint", "dataset", "out"),
    "eval": ("checkpoint", "dataset"),
    "profile": (),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lightpath", description="Sparse path encoder: data, training, evaluation, cost model.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd)
        for name, (typ, default, help_) in {**COMMON, **opts}.items():
            flag = "--" + name.replace("_", "-")
            if typ is _bool and default is False:
                p.add_argument(flag, dest=name, nargs="?", const="true", default=None, help=help_)
            else:
                p.add_argument(flag, dest=name, default=None, help=f"{help_} [default: {default}]")
    return parser


def read_config(file) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(file).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{file}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve(command: str, args: argparse.Namespace, env=os.environ) -> dict:
    """Merge defaults < config file < flags and convert types."""
    opts = {**COMMON, **OPTIONS[command]}
    raw: dict = {name: spec[1] for name, spec in opts.items()}
    if args.config:
        for k, v in read_config(args.config).items():
            if k not in opts or k == "config":
                raise UsageError(f"unknown config key {k!r} for {command}")
            raw[k] = v
    for name in opts:
        v = getattr(args, name, None)
        if v is not None:
            raw[name] = v
    if raw["seed"] is None and env.get("LIGHTPATH_SEED"):
        raw["seed"] = env["LIGHTPATH_SEED"]
    out = {}
    for name, (typ, _, _) in opts.items():
        v = raw[name]
        try:
            out[name] = None if v is None else typ(v)
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {v!r} ({exc})") from None
    for name in REQUIRED[command]:
        if out[name] is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
    if command in TRAINING and out["seed"] is None:
        raise UsageError("a seed is required (--seed or LIGHTPATH_SEED)")
    if out["seed"] is None:
        out["seed"] = 0
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _need_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def cmd_generate(o: dict) -> dict:
    try:
        rows, cols = (int(x) for x in o["grid"].lower().split("x"))
    except ValueError:
        raise UsageError(f"--grid must look like 10x10, got {o['grid']!r}") from None
    if o["length"] < 2:
        raise ValueError("path length must be >= 2")
    if o["paths"] < 1 or o["repeats"] < 1 or o["paths"] % o["repeats"]:
        raise ValueError("--paths must be a positive multiple of --repeats")
    seed = o["seed"]
    net = graph.generate_grid_network(rows, cols, seed)
    ds = graph.generate_synthetic_paths(net, o["paths"] // o["repeats"], o["length"], o["repeats"], seed + 1)
    graph.label_travel_times(net, ds, seed + 2, o["sigma"])
    graph.assign_splits(ds, seed + 3, o["test_fraction"])
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    net.save(out / "network.csv")
    ds.save(out / "paths.tsv")
    files = ["network.csv", "paths.tsv"]
    if o["ranking_groups"] > 0:
        trajectories = ds.paths[: o["ranking_groups"]]
        rk = graph.ranking_dataset(net, trajectories, o["ranking_k"], seed + 4, skip_unrankable=True)
        _split_groups(rk, seed + 5, o["test_fraction"])
        rk.save(out / "ranking.tsv")
        files.append("ranking.tsv")
    return {"files": files, "paths": len(ds), "edges": len(net)}


def _split_groups(ds: graph.PathDataset, seed: int, test_fraction: float) -> None:
    """Whole candidate groups go to the same split."""
    groups = sorted({r.path_id.split("_")[0] for r in ds.records}, key=lambda g: int(g[1:]))
    order = np.random.default_rng(seed).permutation(len(groups))
    n_test = int(round(test_fraction * len(groups)))
    test = {groups[int(i)] for i in order[:n_test]}
    for r in ds.records:
        r.split = "test" if r.path_id.split("_")[0] in test else "train"


def _load_dataset(file) -> graph.PathDataset:
    return graph.PathDataset.load(_need_file(file))


def cmd_pretrain(o: dict) -> dict:
    ds = _load_dataset(o["dataset"])
    paths = ds.paths
    vocab = max(max(p) for p in paths) + 1
    emb = None
    if o["embeddings"]:
        emb = load_edge_embeddings(_need_file(o["embeddings"]), vocab)
        if emb.shape[1] != o["d_model"]:
            raise ValueError(f"embedding width {emb.shape[1]} != d_model {o['d_model']}")
    cfg = EncoderConfig(
        vocab=vocab,
        max_len=o["max_len"] or max(len(p) for p in paths),
        d_model=o["d_model"],
        n_layers=o["layers"],
        n_heads=o["heads"],
        d_ff=o["d_ff"],
        dec_layers=o["dec_layers"],
        freeze_embeddings=o["freeze_embeddings"],
    )
    hyper = ssl.PretrainConfig(
        gamma1=o["gamma1"],
        gamma2=o["gamma2"],
        batch_size=o["batch"],
        epochs=o["epochs"],
        warmup_epochs=o["warmup"],
        lr=o["lr"],
        betas=(o["beta1"], o["beta2"]),
        weight_decay=o["weight_decay"],
        momentum=o["momentum"],
        positive_mode=o["positive_mode"],
        seed=o["seed"],
    )
    if hyper.positive_mode not in ("equation", "prose"):
        raise ValueError(f"unknown positive mode {hyper.positive_mode!r}")
    _ = hyper.views  # validates the ratios
    init = stream(o["seed"], "init")
    main = EncoderModel.init(cfg, init)
    if emb is not None:
        main.set_edge_embeddings(emb)
    head = ssl.RelationHead.init(cfg.d_model, init)
    dual = ssl.DualEncoder.from_main(main, hyper.momentum)
    history = ssl.pretrain(dual, head, paths, hyper)
    ssl.save_pretrained(o["out"], dual, head, hyper)
    if o["log"]:
        ssl.write_log(history, o["log"])
    return {"checkpoint": o["out"], "epochs": len(history), "final_total": history[-1].total}


def cmd_distill(o: dict) -> dict:
    teacher_file = _need_file(o["teacher"])
    dual, _, _ = ssl.load_pretrained(teacher_file)
    ds = _load_dataset(o["dataset"])
    hyper = kd.DistillConfig(
        alpha=o["alpha"],
        temperature=o["temperature"],
        gamma=o["gamma"],
        student_layers=o["student_layers"],
        epochs=o["epochs"],
        warmup_epochs=o["warmup"],
        batch_size=o["batch"],
        lr=o["lr"],
        betas=(o["beta1"], o["beta2"]),
        weight_decay=o["weight_decay"],
        sp=o["sp"],
        seed=o["seed"],
    )
    student = kd.make_student(dual.main, hyper.student_layers, stream(o["seed"], "init"))
    pair = kd.DistillPair(dual.main, student)
    history = kd.distill(pair, ds.paths, hyper)
    kd.save_student(o["out"], pair, hyper, ckpt.file_digest(teacher_file))
    if o["log"]:
        kd.write_log(history, o["log"])
    return {"checkpoint": o["out"], "epochs": len(history), "final_glkd": history[-1].glkd}


def cmd_embed(o: dict) -> dict:
    encoder = kd.load_encoder(_need_file(o["checkpoint"]))
    ds = _load_dataset(o["dataset"])
    x = downstream.embed_paths(encoder, ds.paths, o["gamma_eval"], o["seed"])
    with open(o["out"], "w", encoding="ascii", newline="") as fh:
        for rec, row in zip(ds.records, x):
            fh.write(",".join([rec.path_id, *(repr(float(v)) for v in row)]) + "\n")
    return {"rows": int(x.shape[0]), "dim": int(x.shape[1])}


def cmd_eval(o: dict) -> dict:
    encoder = kd.load_encoder(_need_file(o["checkpoint"]))
    ds = _load_dataset(o["dataset"])
    hyper = downstream.GBRConfig(o["n_trees"], o["learning_rate"], o["max_depth"], o["min_samples_leaf"])
    report = downstream.eval_task(encoder, ds, o["task"], hyper, o["seed"], o["gamma_eval"])
    text = downstream.report_json(o["task"], hyper, o["seed"], report, {"gamma_eval": o["gamma_eval"]})
    if o["out"]:
        Path(o["out"]).write_text(text + "\n", encoding="ascii")
        return {"report": o["out"], **asdict(report)}
    sys.stdout.write(text + "\n")
    return {}


def cmd_profile(o: dict) -> dict:
    cfg = EncoderConfig(
        vocab=o["vocab"],
        max_len=max(max(o["n"]), max(profile.TABLE5_N) if o["table5"] else 0),
        d_model=o["d_model"],
        n_layers=o["layers"],
        n_heads=o["heads"],
        d_ff=o["d_ff"],
        dec_layers=o["dec_layers"],
    )
    if o["table5"]:
        table = profile.scalability_report(cfg, batch=o["batch"], include_decoder=o["include_decoder"])
    else:
        table = profile.scalability_report(cfg, o["n"], o["gamma"], o["batch"], o["include_decoder"])
    csv_text = table.to_csv()
    if o["out"]:
        Path(o["out"]).write_text(csv_text, encoding="ascii")
    else:
        sys.stdout.write(csv_text)
    if o["json"]:
        Path(o["json"]).write_text(table.to_json() + "\n", encoding="ascii")
    return {}


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "profile": cmd_profile,
}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        opts = resolve(args.command, args)
        summary = COMMANDS[args.command](opts)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc), EXIT_ERROR)
    except ckpt.CheckpointError as exc:
        return _fail("checkpoint", str(exc), EXIT_ERROR)
    except graph.DatasetFormatError as exc:
        return _fail("dataset_format", str(exc), EXIT_ERROR)
    except (ValueError, graph.WalkError) as exc:
        return _fail("invalid", str(exc), EXIT_ERROR)
    if summary:
        sys.stderr.write(json.dumps({"ok": args.command, **summary}, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
