"""Command-line entry point.

Subcommands cover the full pipeline: generate, preprocess, encode,
crossings, train, train-rf, predict, evaluate, pipeline. Logs go to
stderr as JSON lines; artifacts are written to files only.

Exit codes: 0 success, 1 validation error, 2 runtime error,
3 acceptance-threshold failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, compare, dataset, encoders, forest, preprocess, rrae, synthgen
from .errors import DispscanError, NonFiniteLoss
from .provenance import config_hash, file_sha256, provenance

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_THRESHOLD = 3

_LOG_LEVELS = {"debug": 0, "info": 1, "error": 2}
_verbosity = "info"


def _log(level, event, **fields):
    if _LOG_LEVELS[level] >= _LOG_LEVELS[_verbosity]:
        record = {"level": level, "event": event}
        record.update(fields)
        print(json.dumps(record, sort_keys=True), file=sys.stderr)


def _load_dataset(path):
    """Accept either a JSON manifest or a bare container file."""
    if str(path).endswith(".json"):
        return dataset.load_trajectory_set(path)
    node_ids, part_ids, dt_index, positions, _ = dataset.read_container(path)
    return dataset.TrajectorySet(node_ids, part_ids, dt_index, positions)


def _read_labels_csv(path):
    labels = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(preprocess.DispersionLabel(
                int(row["node_id"]), int(row["part_id"]), int(row["y"]),
                float(row["spread_mm"]), int(row["peak_timestep"])))
    return labels


def _labeling_config(args):
    if getattr(args, "peak_step", None) is not None:
        return preprocess.LabelingConfig(
            threshold_mm=args.threshold_mm,
            peak_rule=preprocess.PEAK_RULE_EXPLICIT,
            explicit_step=args.peak_step)
    return preprocess.LabelingConfig(threshold_mm=args.threshold_mm)


def _parse_int_list(text):
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _parse_encoding(token, args):
    if "@" in token:
        kind, trunc = token.split("@", 1)
        truncate_at = int(trunc)
    else:
        kind, truncate_at = token, None
    if kind not in encoders.KINDS:
        raise DispscanError(f"unknown encoding {kind!r}")
    return compare.EncodingSpec(
        kind=kind, axis=getattr(args, "axis", "x"), truncate_at=truncate_at,
        wavelet_levels=getattr(args, "wavelet_levels", None),
        wavelet_mode=getattr(args, "wavelet_mode", "symmetric"))


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- generate

def _cmd_generate(args):
    cfg = synthgen.SynthConfig(
        n_nodes=args.nodes, n_runs=args.runs, timesteps=args.timesteps,
        dt_ms=args.dt, dispersed_fraction=args.dispersed_fraction,
        perturbation_mm=args.perturbation, noise_floor_mm=args.noise_floor,
        dispersed_spread_mm=(args.spread_min, args.spread_max),
        wiggle_amplitude_mm=args.wiggle, peak_step=args.peak_step,
        threshold_mm=args.threshold_mm, n_parts=args.parts, seed=args.seed,
        rigid_motion=synthgen.RigidMotionProfile() if args.rigid_motion else None)
    ts, truth = synthgen.generate(cfg)
    dataset.save_trajectory_set(ts, args.out, scenario=f"synthetic-{args.seed}")
    if args.truth:
        with open(args.truth, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node_id", "part_id", "y"])
            for nid, pid, y in zip(ts.node_ids, ts.part_ids, truth):
                writer.writerow([int(nid), int(pid), int(y)])
    _log("info", "generated", nodes=ts.n_nodes, runs=ts.n_runs,
         timesteps=ts.n_timesteps, out=args.out)
    return EXIT_OK


# -------------------------------------------------------------- preprocess

def _cmd_preprocess(args):
    ts = _load_dataset(args.dataset)
    if args.exclude_parts:
        ts = preprocess.filter_parts(ts, _parse_int_list(args.exclude_parts))
    if not args.skip_rigid_removal:
        ts = preprocess.remove_rigid_body_motion(ts)
    labels = preprocess.label_dispersion(ts, _labeling_config(args))
    if args.truncate is not None:
        ts = preprocess.truncate_timesteps(ts, args.truncate)
    preprocess.write_labels_csv(labels, args.out)
    if args.balanced_out is not None:
        if args.balance_seed is None:
            raise DispscanError("--balanced-out requires --balance-seed")
        kept = preprocess.balance_classes(labels, args.balance_seed)
        with open(args.balanced_out, "w") as fh:
            fh.write("\n".join(str(n) for n in kept) + "\n")
    if args.out_dataset is not None:
        dataset.save_trajectory_set(ts, args.out_dataset, scenario="preprocessed")
    _log("info", "preprocessed", nodes=ts.n_nodes,
         dispersed=sum(lb.y for lb in labels), labels=args.out)
    return EXIT_OK


# ------------------------------------------------------------------ encode

def _cmd_encode(args):
    ts = _load_dataset(args.dataset)
    spec = compare.EncodingSpec(
        kind=args.kind, axis=args.axis, truncate_at=args.truncate,
        wavelet_levels=args.wavelet_levels, wavelet_mode=args.wavelet_mode)
    fm = spec.build(ts)
    encoders.save_features(fm, args.out)
    _log("info", "encoded", kind=args.kind, rows=fm.n_samples, dim=fm.dim,
         out=args.out)
    return EXIT_OK


def _cmd_crossings(args):
    ts = _load_dataset(args.dataset)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "timestep", "cumulative_crossings"])
        for nid in ts.node_ids:
            counts = encoders.count_crossings(ts, int(nid), args.axis)
            for t, c in enumerate(counts):
                writer.writerow([int(nid), t, int(c)])
    _log("info", "crossings", nodes=ts.n_nodes, out=args.out)
    return EXIT_OK


# ------------------------------------------------------------------- train

def _features_for_training(args):
    if args.features:
        return encoders.load_features(args.features)
    if not args.dataset or not args.encoding:
        raise DispscanError("provide either --features or --dataset with --encoding")
    ts = _load_dataset(args.dataset)
    return _parse_encoding(args.encoding, args).build(ts)


def _cmd_train(args):
    fm = _features_for_training(args)
    labels = _read_labels_csv(args.labels)
    if args.train_runs:
        fm = fm.rows_for_runs(_parse_int_list(args.train_runs))
    hyper = rrae.RraeHyperparams(
        max_rank=args.kmax, recon_weight=args.lambda_recon,
        cls_weight=args.lambda_cls, joint_epochs=args.n1,
        finetune_epochs=args.n2, latent_dim=args.latent_dim,
        learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed)
    log_fh = open(args.log, "w") if args.log else None
    phase = [1]

    def epoch_log(epoch, losses):
        if log_fh:
            log_fh.write(json.dumps({
                "phase": phase[0], "epoch": epoch, "l_recon": losses.l_recon,
                "l_cls": losses.l_cls, "l_total": losses.l_total}) + "\n")

    try:
        y = compare.row_labels(fm, labels)
        normalized, scaling = encoders.normalize_features(fm)
        model = rrae.build_model(fm.dim, hyper)
        model.scaling = scaling
        _, h1 = rrae.train_phase1(model, normalized.samples, y, log=epoch_log)
        rrae.fit_fixed_basis(model, normalized.samples)
        phase[0] = 3
        _, h3 = rrae.train_phase3(model, normalized.samples, y, log=epoch_log)
    finally:
        if log_fh:
            log_fh.close()
    rrae.save_model(model, args.out)
    _log("info", "trained", rows=fm.n_samples, dim=fm.dim, out=args.out,
         final_loss=h3[-1].l_total if h3 else (h1[-1].l_total if h1 else None))
    return EXIT_OK


def _cmd_train_rf(args):
    fm = _features_for_training(args)
    labels = _read_labels_csv(args.labels)
    if args.train_runs:
        fm = fm.rows_for_runs(_parse_int_list(args.train_runs))
    cfg = forest.ForestConfig(n_trees=args.trees, max_depth=args.max_depth,
                              features_per_split=args.mtry, seed=args.seed)
    model = forest.fit_forest(fm, compare.row_labels(fm, labels), cfg)
    forest.save_forest(model, args.out)
    _log("info", "trained-rf", rows=fm.n_samples, trees=args.trees, out=args.out)
    return EXIT_OK


def _cmd_predict(args):
    fm = encoders.load_features(args.features)
    with open(args.model, "rb") as fh:
        magic = fh.read(4)
    if magic == rrae.MODEL_MAGIC:
        model = rrae.load_model(args.model)
        probs, labels = rrae.predict_features(model, fm)
    elif magic == forest.FOREST_MAGIC:
        model = forest.load_forest(args.model)
        probs, labels = forest.predict_forest(model, fm)
    else:
        raise DispscanError(f"{args.model}: not a recognized model file")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "run_id", "probability", "label"])
        for nid, rid, p, lb in zip(fm.node_ids, fm.run_ids, probs, labels):
            writer.writerow([int(nid), int(rid), repr(float(p)), int(lb)])
    _log("info", "predicted", rows=fm.n_samples, out=args.out)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def _run_evaluation(ts, labels, args, eval_cfg, dataset_hashes):
    specs = [_parse_encoding(tok, args) for tok in eval_cfg["encodings"]]
    split = compare.SplitConfig(
        train_runs=tuple(eval_cfg["train_runs"]),
        val_runs=tuple(eval_cfg["val_runs"]),
        rrae_train_runs=tuple(eval_cfg["rrae_train_runs"])
        if eval_cfg.get("rrae_train_runs") else None)
    hyper = rrae.RraeHyperparams(seed=eval_cfg["seed"], **eval_cfg.get("rrae", {}))
    fcfg = forest.ForestConfig(seed=eval_cfg["seed"], **eval_cfg.get("forest", {}))
    report = compare.compare_encodings(
        ts, labels, specs, eval_cfg["classifiers"], split,
        rrae_hyper=hyper, forest_cfg=fcfg,
        metadata={"seed": eval_cfg["seed"]})
    payload = {"provenance": provenance(eval_cfg, dataset_hashes),
               "report": report.to_dict()}
    if eval_cfg.get("report_path"):
        _write_json(payload, eval_cfg["report_path"])
    if eval_cfg.get("svg_path"):
        with open(eval_cfg["svg_path"], "w") as fh:
            fh.write(report.to_svg())
    print(report.to_text(), end="")
    floor = eval_cfg.get("min_per_class_accuracy")
    if floor is not None:
        for entry in report.entries:
            cm = entry["confusion"]
            for rate in (cm.recall_stable, cm.recall_dispersed):
                if rate is None or rate < floor:
                    _log("error", "threshold-failure", encoding=entry["encoding"],
                         classifier=entry["classifier"], floor=floor,
                         recall_stable=cm.recall_stable,
                         recall_dispersed=cm.recall_dispersed)
                    return EXIT_THRESHOLD
    return EXIT_OK


def _cmd_evaluate(args):
    ts = _load_dataset(args.dataset)
    hashes = {}
    if not str(args.dataset).endswith(".json"):
        hashes[os.path.basename(args.dataset)] = file_sha256(args.dataset)
    if args.labels:
        labels = _read_labels_csv(args.labels)
    else:
        if not args.skip_rigid_removal:
            ts = preprocess.remove_rigid_body_motion(ts)
        labels = preprocess.label_dispersion(ts, _labeling_config(args))
    eval_cfg = {
        "encodings": args.encodings.split(","),
        "classifiers": args.classifiers.split(","),
        "train_runs": list(_parse_int_list(args.train_runs)),
        "val_runs": list(_parse_int_list(args.val_runs)),
        "rrae_train_runs": list(_parse_int_list(args.rrae_train_runs))
        if args.rrae_train_runs else None,
        "seed": args.seed,
        "rrae": {"joint_epochs": args.n1, "finetune_epochs": args.n2,
                 "max_rank": args.kmax, "latent_dim": args.latent_dim,
                 "batch_size": args.batch_size},
        "forest": {"n_trees": args.trees},
        "report_path": args.report,
        "svg_path": args.svg,
        "min_per_class_accuracy": args.min_per_class_accuracy,
    }
    return _run_evaluation(ts, labels, args, eval_cfg, hashes)


# ---------------------------------------------------------------- pipeline

def _cmd_pipeline(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    if args.outdir:
        cfg["outdir"] = args.outdir
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key in ("outdir",):
        if key not in cfg:
            raise DispscanError(f"pipeline config missing {key!r}")
    if "generate" not in cfg and "dataset" not in cfg:
        raise DispscanError("pipeline config needs 'generate' or 'dataset'")
    seed = int(cfg.get("seed", 0))
    outdir = cfg["outdir"]
    os.makedirs(outdir, exist_ok=True)
    run_hash = config_hash(cfg)
    stage = "generate"
    try:
        if "generate" in cfg:
            gen = dict(cfg["generate"])
            spread = gen.pop("dispersed_spread_mm", None)
            rigid = gen.pop("rigid_motion", False)
            scfg = synthgen.SynthConfig(
                seed=seed, **gen,
                **({"dispersed_spread_mm": tuple(spread)} if spread else {}),
                **({"rigid_motion": synthgen.RigidMotionProfile()} if rigid else {}))
            ts, _ = synthgen.generate(scfg)
            ds_path = os.path.join(outdir, "dataset.dspc")
            dataset.save_trajectory_set(ts, ds_path, scenario=f"pipeline-{seed}")
        else:
            ds_path = cfg["dataset"]
            ts = _load_dataset(ds_path)
        hashes = {os.path.basename(ds_path): file_sha256(ds_path)}
        _log("info", "stage-done", stage=stage, config_hash=run_hash)

        stage = "preprocess"
        pre = cfg.get("preprocess", {})
        if pre.get("exclude_parts"):
            ts = preprocess.filter_parts(ts, pre["exclude_parts"])
        if pre.get("rigid_removal", True):
            ts = preprocess.remove_rigid_body_motion(ts)
        lcfg = preprocess.LabelingConfig(
            threshold_mm=pre.get("threshold_mm", 5.0),
            peak_rule=(preprocess.PEAK_RULE_EXPLICIT if pre.get("peak_step") is not None
                       else preprocess.PEAK_RULE_MAX_DISPLACEMENT),
            explicit_step=pre.get("peak_step"))
        labels = preprocess.label_dispersion(ts, lcfg)
        preprocess.write_labels_csv(labels, os.path.join(outdir, "labels.csv"))
        if pre.get("balance_seed") is not None:
            kept = preprocess.balance_classes(labels, pre["balance_seed"])
            ts = preprocess.select_nodes(ts, kept)
            labels = [lb for lb in labels if lb.node_id in set(kept)]
        _log("info", "stage-done", stage=stage, config_hash=run_hash)

        stage = "evaluate"
        ev = dict(cfg.get("evaluate", {}))
        eval_cfg = {
            "encodings": ev.get("encodings", ["displacement", "wavelet", "slope"]),
            "classifiers": ev.get("classifiers", ["rf", "rrae"]),
            "train_runs": ev.get("train_runs", list(range(ts.n_runs // 2))),
            "val_runs": ev.get("val_runs", list(range(ts.n_runs // 2, ts.n_runs))),
            "rrae_train_runs": ev.get("rrae_train_runs"),
            "seed": seed,
            "rrae": ev.get("rrae", {}),
            "forest": ev.get("forest", {}),
            "report_path": os.path.join(outdir, "report.json"),
            "svg_path": os.path.join(outdir, "report.svg") if ev.get("svg", True) else None,
            "min_per_class_accuracy": ev.get("min_per_class_accuracy"),
        }
        ns = argparse.Namespace(axis=ev.get("axis", "x"),
                                wavelet_levels=ev.get("wavelet_levels"),
                                wavelet_mode=ev.get("wavelet_mode", "symmetric"))
        code = _run_evaluation(ts, labels, ns, eval_cfg, hashes)
        _log("info", "stage-done", stage=stage, config_hash=run_hash)
        return code
    except Exception as exc:
        _log("error", "stage-failed", stage=stage, config_hash=run_hash,
             error=type(exc).__name__, message=str(exc))
        raise


# ------------------------------------------------------------------ parser

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dispscan",
        description="Detect simulation nodes sensitive to numerical dispersion.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", choices=sorted(_LOG_LEVELS), default="info")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a labeled multi-run dataset")
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--timesteps", type=int, default=289)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--dispersed-fraction", type=float, default=0.5)
    p.add_argument("--perturbation", type=float, default=1e-6)
    p.add_argument("--spread-min", type=float, default=12.0)
    p.add_argument("--spread-max", type=float, default=50.0)
    p.add_argument("--noise-floor", type=float, default=0.1)
    p.add_argument("--wiggle", type=float, default=2.0)
    p.add_argument("--peak-step", type=int, default=220)
    p.add_argument("--threshold-mm", type=float, default=5.0)
    p.add_argument("--parts", type=int, default=4)
    p.add_argument("--rigid-motion", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("preprocess", help="label dispersion and clean the dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold-mm", type=float, default=5.0)
    p.add_argument("--peak-step", type=int, default=None)
    p.add_argument("--truncate", type=int, default=None)
    p.add_argument("--exclude-parts", default="")
    p.add_argument("--balance-seed", type=int, default=None)
    p.add_argument("--balanced-out", default=None)
    p.add_argument("--skip-rigid-removal", action="store_true")
    p.add_argument("--out", required=True, help="labels CSV path")
    p.add_argument("--out-dataset", default=None)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("encode", help="build a feature matrix from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", choices=encoders.KINDS, required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--truncate", type=int, default=None)
    p.add_argument("--wavelet-levels", type=int, default=None)
    p.add_argument("--wavelet-mode", choices=("symmetric", "zero", "periodic"),
                   default="symmetric")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("crossings", help="cumulative trajectory crossings per node")
    p.add_argument("--dataset", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_crossings)

    p = sub.add_parser("train", help="train the autoencoder classifier")
    p.add_argument("--features", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--encoding", default=None)
    p.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--wavelet-levels", type=int, default=None)
    p.add_argument("--wavelet-mode", default="symmetric")
    p.add_argument("--labels", required=True)
    p.add_argument("--train-runs", default="0")
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--lambda-recon", type=float, default=1.0)
    p.add_argument("--lambda-cls", type=float, default=1.0)
    p.add_argument("--n1", type=int, default=100)
    p.add_argument("--n2", type=int, default=50)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None, help="epoch losses as JSON lines")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-rf", help="train the random-forest baseline")
    p.add_argument("--features", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--encoding", default=None)
    p.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--wavelet-levels", type=int, default=None)
    p.add_argument("--wavelet-mode", default="symmetric")
    p.add_argument("--labels", required=True)
    p.add_argument("--train-runs", default="")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_rf)

    p = sub.add_parser("predict", help="classify feature rows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="train and compare encodings/classifiers")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--threshold-mm", type=float, default=5.0)
    p.add_argument("--peak-step", type=int, default=None)
    p.add_argument("--skip-rigid-removal", action="store_true")
    p.add_argument("--encodings", default="displacement,wavelet,slope")
    p.add_argument("--classifiers", default="rf,rrae")
    p.add_argument("--axis", choices=("x", "y", "z"), default="x")
    p.add_argument("--wavelet-levels", type=int, default=None)
    p.add_argument("--wavelet-mode", default="symmetric")
    p.add_argument("--train-runs", required=True)
    p.add_argument("--val-runs", required=True)
    p.add_argument("--rrae-train-runs", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--n1", type=int, default=100)
    p.add_argument("--n2", type=int, default=50)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--report", default=None)
    p.add_argument("--svg", default=None)
    p.add_argument("--min-per-class-accuracy", type=float, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run generate/preprocess/evaluate from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--outdir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None):
    global _verbosity
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for bad arguments; that is a validation error
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    _verbosity = args.log_level
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        _log("error", "runtime-error", error=type(exc).__name__, message=str(exc))
        return EXIT_RUNTIME
    except DispscanError as exc:
        _log("error", "validation-error", error=type(exc).__name__, message=str(exc))
        return EXIT_VALIDATION
    except (OSError, ValueError, KeyError) as exc:
        _log("error", "validation-error", error=type(exc).__name__, message=str(exc))
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a runtime failure
        _log("error", "runtime-error", error=type(exc).__name__, message=str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
