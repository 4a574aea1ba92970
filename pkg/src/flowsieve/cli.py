"""Command-line pipeline: meter, select, train, eval, synth, pipeline.

Every stage reads and writes files, so each subcommand is re-runnable from
its on-disk inputs alone and every artifact can be golden-file tested.
Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

from . import cfs, metrics, mlp, svm
from .config import (FLOW_CSV_FORMAT, REPORT_FORMAT, PipelineConfig, StageTimer,
                     UsageError, load_config, make_kernel, write_manifest)
from .dataset import (Dataset, apply_scaler, fit_scaler, generate_synthetic,
                      load_flow_csv, one_hot, stratified_split, write_csv)
from .errors import DataError, TrainingDiverged
from .flow_meter import (FEATURE_COLUMNS, MeterConfig, meter_packets,
                         read_packet_file, write_flow_csv)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- meter


def run_meter(packets_path, out_dir, meter_cfg: MeterConfig, label: str) -> Path:
    packets = read_packet_file(packets_path)
    if not packets:
        raise DataError(f"{packets_path}: no packets")
    flows = meter_packets(packets, meter_cfg, label)
    out = Path(out_dir) / "flows.csv"
    write_flow_csv(flows, out)
    return out


def cmd_meter(args) -> int:
    packets_path = _require_file(args.packets)
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    if args.activity_timeout_us or args.flow_timeout_us:
        cfg.meter = MeterConfig(
            activity_timeout_us=args.activity_timeout_us
            or cfg.meter.activity_timeout_us,
            flow_timeout_us=args.flow_timeout_us or cfg.meter.flow_timeout_us)
    label = args.label or cfg.meter_label
    timer = StageTimer()
    timer.start("meter")
    out = run_meter(packets_path, out_dir, cfg.meter, label)
    timer.stop()
    write_manifest(out_dir, "meter", cfg, [packets_path],
                   {"flows.csv": FLOW_CSV_FORMAT}, timer.timings)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- select


def run_select(flows_path, out_dir, cfg: PipelineConfig) -> Path:
    ds = load_flow_csv(flows_path, cfg.bad_value_policy)
    out_dir = Path(out_dir)
    reduced_path = out_dir / "selected.csv"
    if not cfg.select_enabled:
        shutil.copyfile(flows_path, reduced_path)  # validated verbatim copy
        print("selection disabled; pass-through copy written")
        return reduced_path
    stats = cfs.build_stats(ds)
    subset = cfs.best_first_search(stats, cfg.search)
    names = [ds.schema[i] for i in subset.path]
    trajectory = cfs.merit_trajectory(subset, stats)
    kept = ds.select_features([ds.schema[i] for i in sorted(subset.indices)])
    write_csv(kept, reduced_path)

    n_before = ds.n_features
    n_after = len(subset.indices)
    reduction = 100.0 * (1.0 - n_after / n_before)
    report_lines = [
        "selected features (in selection order): " + ", ".join(names),
        f"subset merit: {subset.merit:.6f}",
        "merit trajectory:",
    ]
    for (idx, value) in trajectory:
        report_lines.append(f"  + {ds.schema[idx]}: {value:.6f}")
    report_lines.append(
        f"dimensionality reduction: {reduction:.1f}% ({n_before} -> {n_after})")
    report_path = out_dir / "selection.txt"
    report_path.write_text("\n".join(report_lines) + "\n", encoding="utf-8")

    matrix_path = out_dir / "correlation_matrix.csv"
    with open(matrix_path, "w", encoding="utf-8") as handle:
        handle.write("feature," + ",".join(ds.schema) + ",class\n")
        for i, name in enumerate(ds.schema):
            cells = [f"{v:.6g}" for v in stats.feature_feature[i]]
            cells.append(f"{stats.feature_class[i]:.6g}")
            handle.write(name + "," + ",".join(cells) + "\n")

    print(report_lines[0])
    print(report_lines[-1])
    return reduced_path


def cmd_select(args) -> int:
    flows_path = _require_file(args.flows)
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    if args.disable:
        cfg.select_enabled = False
    if args.max_stale_expansions:
        cfg.search.max_stale_expansions = args.max_stale_expansions
    timer = StageTimer()
    timer.start("select")
    run_select(flows_path, out_dir, cfg)
    timer.stop()
    write_manifest(out_dir, "select", cfg, [flows_path],
                   {"selected.csv": FLOW_CSV_FORMAT,
                    "selection.txt": REPORT_FORMAT,
                    "correlation_matrix.csv": REPORT_FORMAT},
                   timer.timings)
    return EXIT_OK


# ---------------------------------------------------------------- train


def _train_models(train_ds: Dataset, val_ds: Dataset, cfg: PipelineConfig,
                  scaler, out_dir: Path) -> dict[str, Path]:
    artifacts: dict[str, Path] = {}
    if cfg.classifier in ("ann", "both"):
        model = mlp.init_model(train_ds.n_features, cfg.mlp_hidden,
                               seed=cfg.mlp_train.seed)
        model, history = mlp.train(
            model, train_ds.X, one_hot(train_ds.y), val_ds.X, one_hot(val_ds.y),
            cfg.mlp_train)
        model_path = out_dir / "ann_model.txt"
        mlp.save_model(model_path, model, train_ds.schema, scaler,
                       train_ds.class_names)
        history_path = out_dir / "ann_history.csv"
        with open(history_path, "w", encoding="utf-8") as handle:
            handle.write("epoch,train_loss,val_loss\n")
            for epoch, (tl, vl) in enumerate(zip(history.train_loss,
                                                 history.val_loss), start=1):
                handle.write(f"{epoch},{tl:.17g},{vl:.17g}\n")
        artifacts["ann_model.txt"] = model_path
        artifacts["ann_history.csv"] = history_path
        print(f"ann: {len(history.train_loss)} epochs, "
              f"stop: {history.stopping_reason}")
    if cfg.classifier in ("svm", "both"):
        kernel = make_kernel(cfg, train_ds.n_features)
        models = svm.train_ovr(train_ds.X, train_ds.y,
                               len(train_ds.class_names), kernel, cfg.smo)
        model_path = out_dir / "svm_model.txt"
        svm.save_models(model_path, models, train_ds.schema, scaler,
                        train_ds.class_names)
        artifacts["svm_model.txt"] = model_path
        flags = ["converged" if m.converged else "not fully converged"
                 for m in models]
        print(f"svm: {', '.join(flags)}")
    return artifacts


def run_train(flows_path, out_dir, cfg: PipelineConfig) -> dict[str, Path]:
    ds = load_flow_csv(flows_path, cfg.bad_value_policy)
    out_dir = Path(out_dir)
    train_ds, val_ds, test_ds = stratified_split(ds, cfg.split)
    scaler = fit_scaler(train_ds)
    train_scaled = apply_scaler(scaler, train_ds)
    val_scaled = apply_scaler(scaler, val_ds)
    artifacts = _train_models(train_scaled, val_scaled, cfg, scaler, out_dir)
    test_path = out_dir / "test.csv"
    write_csv(test_ds, test_path)  # unscaled; models carry their scaler
    artifacts["test.csv"] = test_path
    return artifacts


def cmd_train(args) -> int:
    flows_path = _require_file(args.flows)
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    if args.classifier:
        cfg.classifier = args.classifier
    if args.hidden:
        cfg.mlp_hidden = args.hidden
    if args.mode:
        cfg.mlp_train.mode = args.mode
    timer = StageTimer()
    timer.start("train")
    artifacts = run_train(flows_path, out_dir, cfg)
    timer.stop()
    formats = {name: (FLOW_CSV_FORMAT if name.endswith(".csv") else
                      mlp.MODEL_FORMAT if name.startswith("ann") else
                      svm.MODEL_FORMAT)
               for name in artifacts}
    write_manifest(out_dir, "train", cfg, [flows_path], formats, timer.timings)
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _load_any_model(path: Path):
    head = path.read_text(encoding="utf-8").split("\n", 1)[0]
    if head == mlp.MODEL_FORMAT:
        model, meta = mlp.load_model(path)
        return ("ann", model, meta)
    if head == svm.MODEL_FORMAT:
        models, meta = svm.load_models(path)
        return ("svm", models, meta)
    raise DataError(f"{path}: unrecognized model format {head!r}")


def _project(ds: Dataset, feature_names: tuple[str, ...], model_path) -> Dataset:
    missing = [n for n in feature_names if n not in ds.schema]
    if missing:
        raise DataError(
            f"{model_path}: evaluation data is missing model features: "
            f"{', '.join(missing)}")
    return ds.select_features(feature_names)


def run_eval(flows_path, out_dir, cfg: PipelineConfig, model_paths: list[Path],
             column_names: list[str] | None = None,
             include_reference: bool = False) -> dict[str, metrics.ClassReport]:
    ds = load_flow_csv(flows_path, cfg.bad_value_policy)
    out_dir = Path(out_dir)
    columns: dict[str, metrics.ClassReport] = {}
    for position, model_path in enumerate(model_paths):
        kind, model, meta = _load_any_model(Path(model_path))
        name = (column_names[position] if column_names
                else Path(model_path).stem)
        projected = _project(ds, meta["features"], model_path)
        X = projected.X
        if meta["scaler"] is not None:
            X = meta["scaler"].transform(X)
        if kind == "ann":
            predictions = mlp.predict_batch(model, X)
        else:
            predictions = svm.predict_batch(model, X)
        columns[name] = metrics.build_report(predictions, projected.y)
    table = metrics.render_table(columns, include_reference)
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    (out_dir / "report.csv").write_text(
        metrics.render_csv(columns, include_reference), encoding="utf-8")
    print(table, end="")
    return columns


def cmd_eval(args) -> int:
    flows_path = _require_file(args.flows)
    model_paths = [_require_file(m) for m in args.model]
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    timer = StageTimer()
    timer.start("eval")
    run_eval(flows_path, out_dir, cfg, model_paths,
             include_reference=args.reference)
    timer.stop()
    write_manifest(out_dir, "eval", cfg, [flows_path] + model_paths,
                   {"report.txt": REPORT_FORMAT, "report.csv": REPORT_FORMAT},
                   timer.timings)
    return EXIT_OK


# ---------------------------------------------------------------- synth


def run_synth(out_dir, cfg: PipelineConfig) -> Path:
    ds, _roles = generate_synthetic(cfg.synth_spec, seed=cfg.seed)
    out = Path(out_dir) / "synthetic_flows.csv"
    write_csv(ds, out)
    return out


def cmd_synth(args) -> int:
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    if args.rows_per_class:
        spec = cfg.synth_spec
        n_classes = len(spec.rows_per_class)
        cfg.synth_spec = type(spec)(
            class_means=spec.class_means,
            rows_per_class=(args.rows_per_class,) * n_classes,
            covariance=spec.covariance, duplicates=spec.duplicates,
            n_noise=spec.n_noise, noise_scale=spec.noise_scale,
            feature_names=spec.feature_names)
    timer = StageTimer()
    timer.start("synth")
    out = run_synth(out_dir, cfg)
    timer.stop()
    write_manifest(out_dir, "synth", cfg, [],
                   {"synthetic_flows.csv": FLOW_CSV_FORMAT}, timer.timings)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------- pipeline


def cmd_pipeline(args) -> int:
    out_dir = _out_dir(args)
    cfg = load_config(args.config, seed=args.seed, out_dir=str(out_dir))
    timer = StageTimer()
    inputs: list[Path] = []
    artifacts: dict[str, str] = {}

    if cfg.packets_path:
        packets_path = _require_file(cfg.packets_path)
        inputs.append(packets_path)
        timer.start("meter")
        flows = run_meter(packets_path, out_dir, cfg.meter, cfg.meter_label)
        timer.stop()
        artifacts["flows.csv"] = FLOW_CSV_FORMAT
    elif cfg.flows_path:
        flows = _require_file(cfg.flows_path)
        inputs.append(flows)
    elif cfg.use_synth:
        timer.start("synth")
        flows = run_synth(out_dir, cfg)
        timer.stop()
        artifacts["synthetic_flows.csv"] = FLOW_CSV_FORMAT
    else:
        raise UsageError("config must provide [input] packets, flows or synth")

    timer.start("select")
    selected = run_select(flows, out_dir, cfg)
    timer.stop()
    artifacts["selected.csv"] = FLOW_CSV_FORMAT
    if cfg.select_enabled:
        artifacts["selection.txt"] = REPORT_FORMAT
        artifacts["correlation_matrix.csv"] = REPORT_FORMAT

    timer.start("train")
    trained = run_train(selected, out_dir, cfg)
    timer.stop()
    for name in trained:
        artifacts[name] = (FLOW_CSV_FORMAT if name.endswith(".csv")
                           else mlp.MODEL_FORMAT if name.startswith("ann")
                           else svm.MODEL_FORMAT)

    prefix = "CFS-" if cfg.select_enabled else ""
    model_paths = []
    column_names = []
    if "ann_model.txt" in trained:
        model_paths.append(trained["ann_model.txt"])
        column_names.append(prefix + "ANN")
    if "svm_model.txt" in trained:
        model_paths.append(trained["svm_model.txt"])
        column_names.append(prefix + "SVM")
    timer.start("eval")
    run_eval(out_dir / "test.csv", out_dir, cfg, model_paths, column_names,
             include_reference=args.reference)
    timer.stop()
    artifacts["report.txt"] = REPORT_FORMAT
    artifacts["report.csv"] = REPORT_FORMAT

    write_manifest(out_dir, "pipeline", cfg, inputs, artifacts, timer.timings)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowsieve",
        description="Tor/nonTor traffic classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key-value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="out")

    p = sub.add_parser("meter", help="packet records -> flow feature CSV")
    p.add_argument("packets")
    p.add_argument("--label", choices=["Tor", "NonTor", "Unlabeled"])
    p.add_argument("--activity-timeout-us", type=int, default=None)
    p.add_argument("--flow-timeout-us", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_meter)

    p = sub.add_parser("select", help="correlation-based feature selection")
    p.add_argument("flows")
    p.add_argument("--disable", action="store_true",
                   help="pass the CSV through unchanged")
    p.add_argument("--max-stale-expansions", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="split, scale and train classifiers")
    p.add_argument("flows")
    p.add_argument("--classifier", choices=["ann", "svm", "both"])
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--mode", choices=["bp-sgd", "lm"])
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved models on a flow CSV")
    p.add_argument("flows")
    p.add_argument("--model", action="append", required=True,
                   help="model file; repeat for a multi-column report")
    p.add_argument("--reference", action="store_true",
                   help="append the published C4.5 comparison column")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic flow CSV")
    p.add_argument("--rows-per-class", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run meter/synth -> select -> train -> eval")
    p.add_argument("--reference", action="store_true")
    common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
