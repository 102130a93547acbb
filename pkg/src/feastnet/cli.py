"""Command-line entry point: ``feastnet {gradcheck,coarsen,train,eval,sweep}``.

Every command prints its resolved configuration as one JSON line before doing
any work. Seeds: the single ``--seed`` value ``s`` drives the data generator
(``s``), model initialization (``s + 1``) and the training shuffle (``s + 2``).
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck, metrics, models
from .coarsening import build_hierarchy
from .graph import (Mesh, MeshFormatError, PointCloudFormatError, knn_graph, load_labeled_points,
                    load_off, mesh_features, one_ring)
from .toy import ToyCorrespondence, ToyExperiment
from .trainer import Sample, TrainConfig, train

MODEL_DEFAULTS = {"arch": "single", "M": 8, "width_scale": 0.5, "translation_invariant": True,
                  "hierarchy_levels": 2}
TOY_DEFAULTS = {"subdivisions": 2, "amplitude": 0.15, "n_train": 1, "n_test": 4,
                "translate": 0.0, "center": True}
DATA_DEFAULTS = {"knn": 16, "n_classes": 0}


class CliError(Exception):
    """Bad input reported as a one-line message with exit status 2."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _coerce(value, like):
    if isinstance(like, bool):
        if isinstance(value, bool):
            return value
        low = str(value).strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise CliError(f"expected a boolean, got {value!r}")
        return low in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return str(value)


def _section(cp, name, defaults):
    out = dict(defaults)
    if cp is not None and cp.has_section(name):
        for key, raw in cp[name].items():
            key = key.replace("-", "_")
            if key not in defaults:
                raise CliError(f"unknown option {key!r} in [{name}]")
            out[key] = _coerce(raw, defaults[key])
    return out


def _read_ini(path):
    if path is None:
        return None
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    known = {"train", "model", "toy", "data"}
    extra = set(cp.sections()) - known
    if extra:
        raise CliError(f"unknown config section(s): {sorted(extra)}")
    return cp


def resolve_config(args) -> dict:
    """Merge defaults, the INI file and command-line flags (flags win)."""
    cp = _read_ini(args.config)
    train_raw = dict(cp["train"]) if cp is not None and cp.has_section("train") else {}
    try:
        cfg = TrainConfig.from_mapping(train_raw)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc)) from exc
    model = _section(cp, "model", MODEL_DEFAULTS)
    toy = _section(cp, "toy", TOY_DEFAULTS)
    data = _section(cp, "data", DATA_DEFAULTS)

    over = {}
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("weight_decay", "weight_decay"),
                      ("checkpoint_interval", "checkpoint_interval")):
        if getattr(args, flag, None) is not None:
            over[key] = getattr(args, flag)
    if getattr(args, "noise_levels", None) is not None:
        over["noise_levels"] = tuple(args.noise_levels)
    seed = args.seed if args.seed is not None else cfg.rng_seed
    over["rng_seed"] = seed
    try:
        cfg = replace(cfg, **over)
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    for key in ("arch", "M", "width_scale", "translation_invariant", "hierarchy_levels"):
        if getattr(args, key, None) is not None:
            model[key] = getattr(args, key)
    for key in ("n_train", "n_test", "translate", "amplitude", "center"):
        if getattr(args, key, None) is not None:
            toy[key] = getattr(args, key)
    for key in ("knn", "n_classes"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if model["M"] < 1:
        raise CliError("M must be positive")
    return {"task": getattr(args, "task", "toy"), "seed": seed, "train": cfg.to_dict(),
            "model": model, "toy": toy, "data": data}


def _print_config(kind, resolved):
    print(json.dumps({"command": kind, "config": resolved}, sort_keys=True))


def _train_config(resolved) -> TrainConfig:
    t = dict(resolved["train"])
    t["rng_seed"] = resolved["seed"] + 2
    return TrainConfig(**t)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def _toy_data(resolved) -> ToyCorrespondence:
    levels = resolved["model"]["hierarchy_levels"] if resolved["model"]["arch"] == "multi" else 0
    return ToyCorrespondence(seed=resolved["seed"], hierarchy_levels=levels, **resolved["toy"])


def _mesh_sample(mesh: Mesh, n_ref: int, levels: int) -> Sample:
    if mesh.n_vertices != n_ref:
        raise CliError(f"mesh has {mesh.n_vertices} vertices, reference has {n_ref}")
    graph = one_ring(mesh)
    h = build_hierarchy(graph, levels) if levels else None
    return Sample(mesh_features(mesh), np.arange(n_ref), graph=graph, hierarchy=h, mesh=mesh)


def _load_mesh(path):
    try:
        return load_off(path)
    except (OSError, MeshFormatError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def _cloud_samples(args, resolved):
    if not args.points or len(args.points) != len(args.labels or []):
        raise CliError("--points and --labels must list the same number of files")
    clouds = []
    for p, l in zip(args.points, args.labels):
        try:
            clouds.append(load_labeled_points(p, l))
        except (OSError, PointCloudFormatError) as exc:
            raise CliError(f"{p}: {exc}") from exc
    n_classes = resolved["data"]["n_classes"] or int(max(c.labels.max() for c in clouds)) + 1
    parts = args.parts if args.parts else sorted({int(v) for c in clouds for v in c.labels})
    if max(parts) >= n_classes:
        raise CliError("part label outside the class range")
    mask = np.zeros(n_classes, dtype=bool)
    mask[parts] = True
    samples = []
    for c in clouds:
        try:
            c.check_labels(parts)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
        X = c.points - c.points.mean(axis=0)
        samples.append(Sample(X, c.labels, graph=knn_graph(c.points, resolved["data"]["knn"]),
                              class_mask=mask))
    return samples, n_classes, parts


def load_task(args, resolved, split="train"):
    """Returns ``(samples, n_classes, reference_mesh, parts)``."""
    task = resolved["task"]
    arch = resolved["model"]["arch"]
    levels = resolved["model"]["hierarchy_levels"] if arch == "multi" else 0
    if task == "toy":
        data = _toy_data(resolved)
        samples = data.train_set() if split == "train" else data.test_set(args_noise(args))
        return samples, data.n_vertices, data.reference, list(range(data.n_vertices))
    if task == "correspondence":
        if not args.reference or not args.meshes:
            raise CliError("correspondence needs --reference and --meshes")
        ref = _load_mesh(args.reference)
        samples = [_mesh_sample(_load_mesh(p), ref.n_vertices, levels) for p in args.meshes]
        return samples, ref.n_vertices, ref, list(range(ref.n_vertices))
    if task == "partlabel":
        samples, n_classes, parts = _cloud_samples(args, resolved)
        return samples, n_classes, None, parts
    raise CliError(f"unknown task {task!r}")


def args_noise(args) -> float:
    return getattr(args, "test_noise", 0.0) or 0.0


def build_model(resolved, d_in, n_classes, hierarchy):
    m = resolved["model"]
    kw = dict(M=m["M"], width_scale=m["width_scale"], translation_invariant=m["translation_invariant"],
              rng_seed=resolved["seed"] + 1)
    if resolved["task"] == "partlabel":
        return models.build_part_labeler(d_in, n_classes, **kw)
    if m["arch"] == "multi":
        return models.build_multi_scale(d_in, n_classes, hierarchy=hierarchy, **kw)
    if m["arch"] != "single":
        raise CliError(f"unknown arch {m['arch']!r}")
    return models.build_single_scale(d_in, n_classes, **kw)


def _accuracy(spec, params, samples) -> float:
    accs = []
    for s in samples:
        pred = models.predict(spec, params, s.features, s.graph, s.hierarchy, s.class_mask)
        accs.append(metrics.correspondence_accuracy(pred, s.targets))
    return float(np.mean(accs))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if not args.tolerance > 0:
        raise CliError("tolerance must be positive")
    resolved = {"seed": args.seed or 0, "trials": args.trials, "model_trials": args.model_trials,
                "tolerance": args.tolerance, "model_tolerance": args.model_tolerance,
                "inject_fault": args.inject_fault}
    _print_config("gradcheck", resolved)
    worst = gradcheck.run_suite(resolved["seed"], args.trials, args.model_trials, corrupt=args.inject_fault)
    seconds = worst.pop("_seconds")
    failed = []
    for kind in sorted(worst):
        tol = args.model_tolerance if kind.startswith("model-") else args.tolerance
        ok = worst[kind] <= tol
        if not ok:
            failed.append(kind)
        print(f"{kind:16s} worst relative error {worst[kind]:.3e}  {'ok' if ok else 'FAIL'}")
    report = {"worst": worst, "failed": failed, "seconds": seconds}
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    if failed:
        print("gradient check failed for: " + ", ".join(failed))
        return 1
    print(f"all gradient checks passed in {seconds:.1f}s")
    return 0


def cmd_coarsen(args) -> int:
    resolved = {"input": str(args.input), "levels": args.levels, "knn": args.knn, "out": str(args.out)}
    _print_config("coarsen", resolved)
    if args.input.suffix.lower() == ".off":
        graph = one_ring(_load_mesh(args.input))
    else:
        try:
            pts = np.loadtxt(args.input, ndmin=2)
        except (OSError, ValueError) as exc:
            raise CliError(f"{args.input}: {exc}") from exc
        graph = knn_graph(pts, args.knn)
    try:
        h = build_hierarchy(graph, args.levels)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    Path(args.out).write_text(h.to_json())
    for l, g in enumerate(h.graphs):
        print(f"level {l}: {g.n} nodes ({h.padded_size(l)} with padding)")
    return 0


def cmd_train(args) -> int:
    resolved = resolve_config(args)
    _print_config("train", resolved)
    samples, n_classes, _, _ = load_task(args, resolved, "train")
    spec, params = build_model(resolved, samples[0].features.shape[1], n_classes, samples[0].hierarchy)
    cfg = _train_config(resolved)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".ndjson")
    log_path.write_text("")

    def on_epoch(epoch, p):
        return {"train_accuracy": _accuracy(spec, p, samples)}

    def make_ckpt(result):
        return checkpoint.Checkpoint(spec, result.params, result.epoch, result.rng_state,
                                     meta={"config": resolved})

    result = train(spec, params, samples, cfg, on_epoch=on_epoch, log_path=log_path,
                   on_checkpoint=lambda r: checkpoint.save_checkpoint(args.out, make_ckpt(r)))
    checkpoint.save_checkpoint(args.out, make_ckpt(result))
    last = result.records[-1] if result.records else {}
    print(json.dumps({"epoch": result.epoch, **last, "checkpoint": str(args.out)}, sort_keys=True))
    return 0


def _resolved_from_checkpoint(args, ckpt) -> dict:
    resolved = json.loads(json.dumps(ckpt.meta.get("config", {})))
    if not resolved:
        raise CliError("checkpoint carries no training configuration")
    return resolved


def cmd_eval(args) -> int:
    try:
        ckpt = checkpoint.load_checkpoint(args.checkpoint)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise CliError(f"{args.checkpoint}: {exc}") from exc
    resolved = _resolved_from_checkpoint(args, ckpt)
    if args.task is not None and args.task != resolved["task"]:
        resolved["task"] = args.task
    if args_noise(args) and args.split == "train":
        raise CliError("--test-noise applies to the held-out copies; add --split test")
    resolved["eval"] = {"metric": args.metric, "split": args.split, "test_noise": args_noise(args)}
    _print_config("eval", resolved)
    samples, n_classes, reference, parts = load_task(args, resolved, args.split)
    spec = ckpt.spec
    if samples[0].features.shape[1] != spec.d_in or n_classes != spec.n_classes:
        raise CliError(f"checkpoint expects {spec.d_in} input features and {spec.n_classes} classes, "
                       f"data has {samples[0].features.shape[1]} and {n_classes}")
    preds = [models.predict(spec, ckpt.params, s.features, s.graph, s.hierarchy, s.class_mask)
             for s in samples]
    if args.metric == "accuracy":
        per = [metrics.correspondence_accuracy(p, s.targets) for p, s in zip(preds, samples)]
        result = {"metric": "accuracy", "per_shape": per, "mean": float(np.mean(per))}
        print(f"accuracy {result['mean']:.6f}")
    elif args.metric == "geodesic-curve":
        if reference is None:
            raise CliError("geodesic-curve needs a mesh task")
        th = np.asarray(args.thresholds if args.thresholds else np.linspace(0, 0.5, 11))
        curve = metrics.geodesic_error_curve(np.concatenate(preds),
                                             np.concatenate([s.targets for s in samples]), reference, th)
        result = {"metric": "geodesic-curve", "curve": curve.as_rows()}
        print(metrics.format_table(curve.as_rows()))
    else:
        scores = [metrics.miou(p, s.targets, parts)[1] for p, s in zip(preds, samples)]
        summary = metrics.dataset_miou([(resolved["task"], s) for s in scores])
        result = {"metric": "miou", "per_shape": scores, **summary}
        print(f"miou {summary['overall']:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True))
    return 0


SWEEP_SETTINGS = {"M": int, "width_scale": float, "translation_invariant": lambda v: _coerce(v, True),
                  "noise_levels": None}


def cmd_sweep(args) -> int:
    resolved = resolve_config(args)
    if resolved["task"] != "toy":
        raise CliError("sweep runs on the toy task only")
    if args.setting == "noise_levels":
        values = [tuple(float(x) for x in v.split(",") if x) for v in args.values]
    else:
        values = [SWEEP_SETTINGS[args.setting](v) for v in args.values]
    resolved["sweep"] = {"setting": args.setting, "values": values, "test_noise": args_noise(args),
                         "eval_on": args.eval_on}
    _print_config("sweep", resolved)
    m = resolved["model"]
    task = ToyExperiment(_toy_data(resolved), arch=m["arch"], M=m["M"], width_scale=m["width_scale"],
                         translation_invariant=m["translation_invariant"], model_seed=resolved["seed"] + 1,
                         eval_on=args.eval_on, test_noise=args_noise(args))
    rows = metrics.ablation_sweep(task, args.setting, values, _train_config(resolved))
    print(metrics.format_table(rows))
    if args.out:
        Path(args.out).write_text(metrics.to_ndjson(rows))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _training_flags(p):
    p.add_argument("--config", help="INI file with [train], [model], [toy] and [data] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=("toy", "correspondence", "partlabel"), default="toy")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--noise-levels", type=float, nargs="*")
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--arch", choices=("single", "multi"))
    p.add_argument("--M", type=int)
    p.add_argument("--width-scale", type=float)
    p.add_argument("--translation-invariant", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--hierarchy-levels", type=int)
    p.add_argument("--n-train", type=int, help="toy: deformed training copies")
    p.add_argument("--n-test", type=int, help="toy: held-out copies")
    p.add_argument("--translate", type=float, help="toy: random translation scale")
    p.add_argument("--amplitude", type=float, help="toy: deformation amplitude")
    p.add_argument("--center", action=argparse.BooleanOptionalAction, default=None,
                   help="toy: subtract the centroid from the features")
    _data_flags(p)


def _data_flags(p):
    p.add_argument("--reference", help="correspondence: reference OFF mesh")
    p.add_argument("--meshes", nargs="*", help="correspondence: OFF meshes in reference vertex order")
    p.add_argument("--points", nargs="*", help="partlabel: point files")
    p.add_argument("--labels", nargs="*", help="partlabel: label files")
    p.add_argument("--parts", type=int, nargs="*", help="partlabel: labels of the category")
    p.add_argument("--knn", type=int)
    p.add_argument("--n-classes", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feastnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--model-trials", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--model-tolerance", type=float, default=1e-4)
    p.add_argument("--inject-fault", choices=("feast-conv", "linear"), help="test hook: corrupt one gradient")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("coarsen", help="build and export a coarsening hierarchy")
    p.add_argument("input", type=Path, help="OFF mesh, or whitespace-separated points for a kNN graph")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--knn", type=int, default=16)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_coarsen)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="NDJSON log path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--metric", choices=("accuracy", "geodesic-curve", "miou"), default="accuracy")
    p.add_argument("--task", choices=("toy", "correspondence", "partlabel"))
    p.add_argument("--split", choices=("train", "test"), default="train", help="toy: which copies")
    p.add_argument("--test-noise", type=float, default=0.0, help="toy: vertex noise on test copies")
    p.add_argument("--thresholds", type=float, nargs="*")
    p.add_argument("--out", help="JSON output path")
    _data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="ablation over one setting on the toy task")
    _training_flags(p)
    p.add_argument("--setting", choices=sorted(SWEEP_SETTINGS), required=True)
    p.add_argument("--values", nargs="+", required=True,
                   help="one value per run; noise levels as comma lists, e.g. 0.01,0.05")
    p.add_argument("--eval-on", choices=("train", "test"), default="test")
    p.add_argument("--test-noise", type=float, default=0.0)
    p.add_argument("--out", help="NDJSON output path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
