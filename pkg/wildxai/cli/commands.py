"""Subcommands of the ``wildxai`` command-line tool."""
import argparse
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List

import pandas as pd

from wildxai.config import RunConfig, get_settings, load_run_config
from wildxai.exceptions import UsageError
from wildxai.models.dataset import Dataset, SampleSet
from wildxai.services import analytics, artifacts, explainers
from wildxai.services.archive import dataset_digest, load_dataset, save_dataset
from wildxai.services.data_pipeline import (
    derive_calendar_groups,
    format_missingness,
    ingest_dataset,
    write_missingness,
)
from wildxai.services.external import ExternalPredictor
from wildxai.services.predictors import PredictorHandle, evaluate_accuracy, load_model, save_model
from wildxai.services.schemas import load_schema
from wildxai.services.study import (
    build_predictor,
    explain_cohort,
    format_report,
    render_figures,
    run_explanation_pipeline,
    run_feature_selection_study,
    run_model_comparison,
    write_study_report,
)

logger = logging.getLogger(__name__)

# flag -> config key
FLAG_KEYS = {
    "seed": "run.seed",
    "threads": "run.threads",
    "schema": "dataset.schema_ref",
    "layout": "dataset.layout",
    "model_kind": "model.kind",
    "external_command": "model.external_command",
    "explainer": "explainer.method",
    "split": "explainer.split",
    "ks": "study.ks",
    "directions": "study.directions",
}


class CliParser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting, so usage errors get the error line."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge the config file, ``--set`` overrides and dedicated flags.

    Dedicated flags win over ``--set``, which wins over the file.
    """
    overrides: Dict[str, Any] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return load_run_config(args.config, overrides)


def out_dir(args: argparse.Namespace) -> Path:
    path = Path(args.out) if args.out else get_settings().OUT_DIR
    path.mkdir(parents=True, exist_ok=True)
    return path


def open_dataset(args: argparse.Namespace) -> Dataset:
    if not args.dataset:
        raise UsageError("--dataset is required")
    return load_dataset(args.dataset)


def open_predictor(args: argparse.Namespace, cfg: RunConfig, dataset: Dataset, train_missing: bool = False) -> PredictorHandle:
    """A saved model, an external process, or (when allowed) a freshly trained native model."""
    schema = dataset.window_schema
    if getattr(args, "model", None):
        return load_model(args.model)
    if cfg.model.kind == "external":
        if not cfg.model.external_command:
            raise UsageError("model.kind = external needs model.external_command or --external-command")
        return ExternalPredictor(cfg.model.external_command, schema.shape, schema.feature_names, cfg.run.threads)
    if train_missing:
        return build_predictor(cfg.model, dataset.split("train"), schema.feature_names, cfg.run.seed, cfg.run.threads)
    raise UsageError("--model is required for native model kinds")


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    if not args.data:
        raise UsageError("--data is required")
    out = out_dir(args)
    schema = load_schema(cfg.dataset.schema_ref)
    dataset, report = ingest_dataset(
        args.data, schema, cfg.dataset.layout, cfg.run.seed, cfg.dataset.val_fraction, cfg.dataset.test_fraction
    )
    archive = save_dataset(dataset, out / "dataset.db")
    write_missingness(report, out)
    print(format_missingness(report), end="")
    print(f"dataset={archive} hash={dataset_digest(dataset)}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    if cfg.model.kind == "external":
        raise UsageError("external models are trained outside wildxai")
    dataset = open_dataset(args)
    handle = build_predictor(
        cfg.model, dataset.split("train"), dataset.window_schema.feature_names, cfg.run.seed, cfg.run.threads
    )
    path = save_model(handle, out_dir(args) / "model.json")
    print(f"model={path} id={handle.id}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = open_dataset(args)
    split_name = cfg.explainer.split
    with open_predictor(args, cfg, dataset) as handle:
        report = evaluate_accuracy(handle, dataset.split(split_name))
    frame = pd.DataFrame({
        "sample_id": report.sample_ids,
        "label": report.labels,
        "probability": [repr(float(p)) for p in report.probabilities],
        "correct": report.correct.astype(int),
    })
    path = out_dir(args) / f"eval_{split_name}.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    print(f"split={split_name} samples={len(frame)} accuracy={report.accuracy * 100:.2f}")
    return 0


def cmd_explain(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = open_dataset(args)
    out = out_dir(args)
    ex = cfg.explainer
    manifest: Dict[str, Any] = {
        "format": "wildxai-explain",
        "version": 1,
        "explainer": ex.method,
        "seed": cfg.run.seed,
        "dataset_hash": dataset_digest(dataset),
        "resolved_config": cfg.to_lines(),
    }
    with open_predictor(args, cfg, dataset) as handle:
        manifest["model_id"] = handle.id
        if ex.method == "permutation":
            importance = explainers.permutation_importance(
                handle, dataset.split(ex.split), ex.permutation_repeats, cfg.run.seed,
                dataset.window_schema.feature_names,
            )
            files = [
                artifacts.write_permutation(importance, out / "permutation.csv"),
                artifacts.write_ranking(importance.to_ranking(), out / "ranking.csv"),
            ]
        else:
            cohort, background, scheme, attributions, _ = explain_cohort(dataset, handle, cfg)
            files = [artifacts.write_attributions(attributions, out / "attributions.csv")]
            manifest["cohort"] = [int(i) for i in cohort.sample_ids]
            manifest["background_digest"] = background.digest()
            manifest["players"] = scheme.M
    manifest["files"] = {p.name: artifacts.file_digest(p) for p in files}
    artifacts.write_manifest(manifest, out / "explain_manifest.json")
    print(" ".join(f"{p.name}" for p in files))
    return 0


def cmd_aggregate(args: argparse.Namespace, cfg: RunConfig) -> int:
    if not args.attributions:
        raise UsageError("--attributions is required")
    out = out_dir(args)
    attributions = artifacts.read_attributions(args.attributions, seed=cfg.run.seed)
    summary = analytics.average_attributions(attributions)
    ranking = analytics.rank_features(summary)
    summaries = [summary]
    if args.by:
        if not args.dataset:
            raise UsageError("--by needs --dataset for event dates")
        dataset = open_dataset(args)
        everything = SampleSet.concat([s for s in dataset.splits.values() if len(s)])
        grouped = analytics.group_summaries(attributions, derive_calendar_groups(everything), args.by)
        summaries.extend(grouped.summaries.values())
    artifacts.write_summaries(summaries, out / "summary.csv")
    artifacts.write_ranking(ranking, out / "ranking.csv")
    lines = [f"{i}. {e.feature} {e.score:.6f}" for i, e in enumerate(ranking.entries, start=1)]
    if args.compare:
        other = analytics.rank_features(artifacts.read_attributions(args.compare, seed=cfg.run.seed))
        agreement = analytics.explainer_agreement(ranking, other, cfg.study.agreement_k)
        text = (
            f"spearman_rho = {agreement.spearman_rho:.6f}\n"
            f"sign_match_rate = {agreement.sign_match_rate:.6f}\n"
            f"k = {agreement.k}\n"
            f"compared = {','.join(agreement.compared)}\n"
        )
        (out / "agreement.txt").write_text(text)
        lines.append(text.rstrip())
    print("\n".join(lines))
    return 0


def cmd_render(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = out_dir(args)
    if args.attributions and args.sample is not None:
        chosen = [a for a in artifacts.read_attributions(args.attributions) if a.sample_id == args.sample]
        if not chosen:
            raise UsageError(f"sample {args.sample} not found in {args.attributions}")
        summaries = [analytics.summary_of(chosen[0])]
    elif args.summary:
        summaries = artifacts.read_summaries(args.summary)
    else:
        raise UsageError("render needs --summary, or --attributions with --sample")

    ranking = artifacts.read_ranking(args.ranking) if args.ranking else None
    written: List[Path] = []
    for summary in summaries:
        prefix = "" if summary.group_key == "all" else summary.group_key.replace("=", "_") + "_"
        written.extend(render_figures(summary, ranking or analytics.rank_features(summary), cfg, out, prefix=prefix))
    print(" ".join(p.name for p in written))
    return 0


def cmd_study(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = open_dataset(args)
    out = out_dir(args)
    if args.models:
        kinds = [k.strip() for k in args.models.split(",") if k.strip()]
        sections = [cfg.model.model_copy(update={"kind": kind}) for kind in kinds]
        report = run_model_comparison(
            dataset, sections, cfg.run.seed, cfg.run.threads, timing_repeats=cfg.study.timing_repeats
        )
    else:
        if not args.ranking:
            raise UsageError("study needs --ranking (feature selection) or --models (model comparison)")
        ranking = artifacts.read_ranking(args.ranking, source=Path(args.ranking).stem)
        report = run_feature_selection_study(
            dataset, ranking, cfg.study.ks, cfg.study.directions, cfg.model,
            seed=cfg.run.seed, threads=cfg.run.threads,
            timing_repeats=cfg.study.timing_repeats, parallel=cfg.study.parallel,
        )
    files = write_study_report(report, out, cfg.to_lines())
    print(files["text"].read_text(), end="")
    return 0


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    if not args.report:
        raise UsageError("--report is required")
    print(format_report(args.report), end="")
    return 0


def cmd_pipeline(args: argparse.Namespace, cfg: RunConfig) -> int:
    dataset = open_dataset(args)
    with open_predictor(args, cfg, dataset, train_missing=True) as handle:
        run = run_explanation_pipeline(dataset, handle, cfg, out_dir(args))
    print(f"cohort={run.cohort_size} manifest={run.manifest}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunConfig], int]] = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "aggregate": cmd_aggregate,
    "render": cmd_render,
    "study": cmd_study,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="wildxai", description="Temporal feature attribution for wildfire classifiers")
    common = CliParser(add_help=False)
    common.add_argument("--config", type=Path, help="section.key = value file, or a run manifest")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory (default: $WILDXAI_OUT_DIR)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("ingest", parents=[common], help="CSV to dataset archive")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--layout", choices=["long", "wide"])

    p = sub.add_parser("train", parents=[common], help="train a native model")
    p.add_argument("--dataset")
    p.add_argument("--model-kind", choices=["random_forest", "gradient_boosting", "logistic"])

    for name, helptext in (("eval", "accuracy on a split"), ("explain", "attribute the correct positives")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--dataset")
        p.add_argument("--model")
        p.add_argument("--external-command")
        p.add_argument("--split", choices=["train", "val", "test"])
        if name == "explain":
            p.add_argument("--explainer", choices=["exact_shapley", "kernel_shap", "lime", "permutation"])

    p = sub.add_parser("aggregate", parents=[common], help="summaries, ranking and agreement")
    p.add_argument("--attributions")
    p.add_argument("--dataset")
    p.add_argument("--by", choices=["month", "season"])
    p.add_argument("--compare", help="second attribution file for explainer agreement")

    p = sub.add_parser("render", parents=[common], help="SVG figures")
    p.add_argument("--summary")
    p.add_argument("--ranking")
    p.add_argument("--attributions")
    p.add_argument("--sample", type=int)

    p = sub.add_parser("study", parents=[common], help="feature-selection or model-comparison study")
    p.add_argument("--dataset")
    p.add_argument("--ranking")
    p.add_argument("--models", help="comma-separated model kinds to compare")
    p.add_argument("--model-kind", choices=["random_forest", "gradient_boosting", "logistic"])
    p.add_argument("--external-command")
    p.add_argument("--ks")
    p.add_argument("--directions")

    p = sub.add_parser("report", parents=[common], help="print a CSV report as aligned text")
    p.add_argument("--report")

    p = sub.add_parser("pipeline", parents=[common], help="explain, aggregate and render in one run")
    p.add_argument("--dataset")
    p.add_argument("--model")
    p.add_argument("--model-kind", choices=["random_forest", "gradient_boosting", "logistic", "external"])
    p.add_argument("--external-command")
    p.add_argument("--explainer", choices=["exact_shapley", "kernel_shap", "lime", "permutation"])
    p.add_argument("--split", choices=["train", "val", "test"])
    return parser


def dispatch(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    logger.debug(f"Resolved config:\n{cfg.to_text()}")
    return COMMANDS[args.command](args, cfg)
