"""Experiment orchestration: model comparison, feature-selection study, explanation runs."""
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from wildxai.config import ModelSection, RunConfig
from wildxai.exceptions import RankingError, StudyError, WildxaiError
from wildxai.models.attribution import FeatureRanking
from wildxai.models.dataset import Dataset, SampleSet, WindowSchema
from wildxai.models.predictor import LogisticConfig, PredictorKind, TreeEnsembleConfig
from wildxai.models.study import ExplanationRun, StudyReport, StudyRow
from wildxai.services import analytics, artifacts, explainers, render
from wildxai.services.archive import dataset_digest
from wildxai.services.data_pipeline import derive_calendar_groups, feature_values, restrict_features
from wildxai.services.external import ExternalPredictor
from wildxai.services.predictors import (
    PredictorHandle,
    evaluate_accuracy,
    train_gradient_boosting,
    train_logistic,
    train_random_forest,
)

logger = logging.getLogger(__name__)


def config_hash(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_predictor(
    section: ModelSection,
    train: SampleSet,
    feature_names: List[str],
    seed: int = 0,
    threads: int = 1,
) -> PredictorHandle:
    """
    Train a native model, or connect to an external one, from a model section.

    Args:
        section: ``model.*`` configuration
        train: Imputed training split
        feature_names: Schema feature names in row order
        seed: Run seed
        threads: Worker threads (forest growing, external pool size)

    Returns:
        PredictorHandle: Ready-to-use predictor
    """
    kind = PredictorKind(section.kind)
    if kind == PredictorKind.RANDOM_FOREST:
        cfg = TreeEnsembleConfig.forest(
            num_trees=section.num_trees, min_split=section.min_split, max_depth=section.max_depth, seed=seed
        )
        return train_random_forest(train, cfg, feature_names=feature_names, threads=threads)
    if kind == PredictorKind.GRADIENT_BOOSTING:
        cfg = TreeEnsembleConfig.boosting(
            num_trees=section.num_trees,
            min_split=section.min_split,
            max_depth=section.max_depth if section.max_depth is not None else 6,
            learning_rate=section.learning_rate,
            reg_lambda=section.reg_lambda,
            min_child_weight=section.min_child_weight,
            seed=seed,
        )
        return train_gradient_boosting(train, cfg, feature_names=feature_names)
    if kind == PredictorKind.LOGISTIC:
        return train_logistic(
            train, l2=section.l2, epochs=section.epochs, seed=seed, step_size=section.step_size,
            feature_names=feature_names,
        )
    if not section.external_command:
        raise StudyError("model.kind = external needs model.external_command")
    return ExternalPredictor(section.external_command, train.shape, feature_names, pool_size=threads)


def _timed(train_fn: Callable[[], PredictorHandle], repeats: int) -> Tuple[PredictorHandle, float]:
    """Train ``repeats`` times; return the last handle and the median wall time."""
    times = []
    handle = None
    for _ in range(max(1, repeats)):
        if handle is not None:
            handle.close()
        start = time.perf_counter()
        handle = train_fn()
        times.append(time.perf_counter() - start)
    return handle, float(np.median(times))


def _section_payload(section: ModelSection, seed: int, features: Sequence[str] = ()) -> Dict[str, Any]:
    return {"model": section.model_dump(), "seed": seed, "features": list(features)}


def _comparison_names(configs: Sequence[ModelSection], names: Optional[Sequence[str]]) -> List[str]:
    """Row names for a comparison; repeated kinds are numbered in order (random_forest-1, random_forest-2)."""
    if names:
        names = list(names)
        if len(names) != len(configs):
            raise StudyError(f"{len(names)} names given for {len(configs)} model configs")
        if len(set(names)) != len(names):
            raise StudyError(f"model names must be unique: {', '.join(names)}")
        return names
    kinds = [c.kind for c in configs]
    seen: Dict[str, int] = {}
    out = []
    for kind in kinds:
        seen[kind] = seen.get(kind, 0) + 1
        out.append(f"{kind}-{seen[kind]}" if kinds.count(kind) > 1 else kind)
    return out


def run_model_comparison(
    dataset: Dataset,
    configs: Sequence[ModelSection],
    seed: int = 0,
    threads: int = 1,
    timing_repeats: int = 1,
    names: Optional[Sequence[str]] = None,
) -> StudyReport:
    """
    Train and evaluate every model config on the same splits.

    External launch or protocol failures are recorded on their row and the
    run continues. Rows are sorted by accuracy, failed rows last.
    """
    if not configs:
        raise StudyError("model comparison needs at least one config")
    schema = dataset.window_schema
    train, test = dataset.split("train"), dataset.split("test")
    names = _comparison_names(configs, names)

    rows = []
    for name, section in zip(names, configs):
        external = section.kind == PredictorKind.EXTERNAL.value
        payload = _section_payload(section, seed)
        try:
            handle, seconds = _timed(
                lambda: build_predictor(section, train, schema.feature_names, seed, threads), timing_repeats
            )
            with handle:
                accuracy = evaluate_accuracy(handle, test).accuracy * 100
            rows.append(StudyRow(
                configuration=name, model_kind=section.kind, direction="all", features=tuple(schema.feature_names),
                accuracy=accuracy, train_seconds=None if external else seconds, seed=seed,
                config_hash=config_hash(payload), reproducible=not external,
            ))
            logger.info(f"Model {name}: accuracy {accuracy:.2f}%")
        except WildxaiError as e:
            if not external:
                raise
            logger.warning(f"External model {name} failed: {e}")
            rows.append(StudyRow(
                configuration=name, model_kind=section.kind, direction="all", seed=seed,
                config_hash=config_hash(payload), reproducible=False, error=f"{e.token}: {e}",
            ))

    rows.sort(key=lambda r: (r.accuracy is None, -(r.accuracy or 0.0)))
    return StudyReport(
        study="model_comparison",
        rows=rows,
        dataset_hash=dataset_digest(dataset),
        config_hash=config_hash({"configs": [c.model_dump() for c in configs], "seed": seed}),
        seed=seed,
        parameters={"models": ",".join(names), "timing_repeats": str(timing_repeats)},
    )


def select_by_ranking(ranking: FeatureRanking, k: int, direction: str) -> List[str]:
    ordered = ranking.features if direction == "most" else list(reversed(ranking.features))
    return ordered[:k]


def run_feature_selection_study(
    dataset: Dataset,
    ranking: FeatureRanking,
    ks: Sequence[int],
    directions: Sequence[str],
    section: ModelSection,
    seed: int = 0,
    threads: int = 1,
    timing_repeats: int = 3,
    parallel: bool = False,
) -> StudyReport:
    """
    Retrain on the k most or least important features and compare to the full model.

    Every row restricts all splits to whole feature rows (schema order kept),
    trains with the same seed and reports test accuracy in percent. Training
    time is the median of ``timing_repeats`` runs; parallel mode skips timing.

    Args:
        dataset: Imputed dataset
        ranking: Full ranking over every schema feature
        ks: Subset sizes
        directions: Any of ``most`` / ``least``
        section: Model configuration shared by all rows
        seed: Run seed
        threads: Worker threads
        timing_repeats: Training runs per row for the median time
        parallel: Run rows concurrently (timings not recorded)

    Returns:
        StudyReport: Baseline row first, then one row per (k, direction)
    """
    schema = dataset.window_schema
    N = schema.n_features
    if sorted(ranking.features) != sorted(schema.feature_names):
        raise RankingError("ranking must list every schema feature exactly once")
    bad_k = [k for k in ks if not 1 <= k <= N]
    if bad_k:
        raise StudyError(f"k values {bad_k} outside 1..{N}", ks=list(ks), features=N)
    bad_dir = [d for d in directions if d not in ("most", "least")]
    if bad_dir:
        raise StudyError(f"unknown directions {bad_dir}")
    if section.kind == PredictorKind.EXTERNAL.value:
        raise StudyError("feature-selection retraining needs a native model kind")

    plan: List[Tuple[str, Optional[int], str, List[str]]] = [("baseline", N, "all", schema.feature_names)]
    for k in ks:
        for direction in directions:
            plan.append((f"{direction}-{k}", k, direction, select_by_ranking(ranking, k, direction)))

    def run(item: Tuple[str, Optional[int], str, List[str]], repeats: int, row_threads: int) -> StudyRow:
        name, k, direction, features = item
        train, sub = restrict_features(dataset.split("train"), schema, features)
        test, _ = restrict_features(dataset.split("test"), schema, features)
        handle, seconds = _timed(lambda: build_predictor(section, train, sub.feature_names, seed, row_threads), repeats)
        accuracy = evaluate_accuracy(handle, test).accuracy * 100
        logger.info(f"Feature selection {name}: accuracy {accuracy:.2f}%, train {seconds:.3f}s")
        return StudyRow(
            configuration=name, model_kind=section.kind, k=k, direction=direction,
            features=tuple(sub.feature_names), accuracy=accuracy,
            train_seconds=None if parallel else seconds, seed=seed,
            config_hash=config_hash(_section_payload(section, seed, sub.feature_names)),
        )

    if parallel:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            rows = list(pool.map(lambda item: run(item, 1, 1), plan))
    else:
        rows = [run(item, timing_repeats, threads) for item in plan]

    return StudyReport(
        study="feature_selection",
        rows=rows,
        dataset_hash=dataset_digest(dataset),
        config_hash=config_hash({
            "model": section.model_dump(), "ranking": ranking.features, "ks": list(ks),
            "directions": list(directions), "seed": seed,
        }),
        seed=seed,
        parameters={
            "ks": ",".join(str(k) for k in ks),
            "directions": ",".join(directions),
            "ranking": ",".join(ranking.features),
            "ranking_source": ranking.source,
            "timing_repeats": str(timing_repeats),
            "parallel": str(parallel).lower(),
        },
    )


# Reports

def report_frame(report: StudyReport) -> pd.DataFrame:
    return pd.DataFrame([
        {
            "configuration": r.configuration,
            "model_kind": r.model_kind,
            "k": r.k if r.k is not None else "",
            "direction": r.direction or "",
            "accuracy": "" if r.accuracy is None else f"{r.accuracy:.2f}",
            "train_seconds": "" if r.train_seconds is None else f"{r.train_seconds:.4f}",
            "seed": r.seed,
            "config_hash": r.config_hash,
            "reproducible": str(r.reproducible).lower(),
            "error": r.error or "",
            "features": ";".join(r.features),
        }
        for r in report.rows
    ])


def write_study_report(report: StudyReport, out_dir: Union[str, Path], resolved_config: Sequence[str] = ()) -> Dict[str, Path]:
    """
    Write ``<study>.csv``, an aligned ``<study>.txt`` and a key-value manifest.

    Returns:
        Dict[str, Path]: Written files by role
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = report_frame(report)
    csv_path = out_dir / f"{report.study}.csv"
    txt_path = out_dir / f"{report.study}.txt"
    manifest_path = out_dir / f"{report.study}_manifest.txt"
    frame.to_csv(csv_path, index=False, lineterminator="\n")
    txt_path.write_text(frame.drop(columns=["features"]).to_string(index=False) + "\n")

    lines = [
        f"study = {report.study}",
        f"seed = {report.seed}",
        f"dataset_hash = {report.dataset_hash}",
        f"config_hash = {report.config_hash}",
    ]
    lines += [f"parameter.{k} = {v}" for k, v in sorted(report.parameters.items())]
    lines += [f"row.{r.configuration} = seed={r.seed} config_hash={r.config_hash} reproducible={str(r.reproducible).lower()}"
              for r in report.rows]
    lines += [f"config {line}" for line in resolved_config]
    manifest_path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote {report.study} report ({len(report.rows)} rows) to {out_dir}")
    return {"csv": csv_path, "text": txt_path, "manifest": manifest_path}


def format_report(path: Union[str, Path]) -> str:
    """Aligned text for any CSV report or artifact written by the toolkit."""
    path = Path(path)
    if not path.is_file():
        raise StudyError(f"report not found: {path}")
    with path.open(encoding="utf-8") as fh:
        skip = 1 if fh.readline().startswith("#") else 0
    frame = pd.read_csv(path, skiprows=skip, keep_default_na=False)
    return frame.to_string(index=False) + "\n"


# Explanation runs

def explain_cohort(dataset: Dataset, handle: PredictorHandle, cfg: RunConfig):
    """Select the correctly predicted positives of the configured split and explain them."""
    ex = cfg.explainer
    split = dataset.split(ex.split)
    report = evaluate_accuracy(handle, split)
    ids = analytics.select_explained_samples(split, report=report)
    cohort = split.take([split.position_of(i) for i in ids])

    background = explainers.draw_background(
        dataset.split("train"), ex.background_size, cfg.run.seed, ex.background_mode
    )
    scheme = explainers.build_player_scheme(dataset.window_schema, ex.granularity, ex.fuse_groups)
    attributions = explainers.explain_samples(
        handle, cohort, background, scheme,
        method=ex.method, seed=cfg.run.seed, threads=cfg.run.threads,
        num_coalitions=ex.num_coalitions, num_perturbations=ex.num_perturbations,
        kernel_width=ex.kernel_width, top_k=ex.top_k, ridge_alpha=ex.ridge_alpha,
    )
    return cohort, background, scheme, attributions, report


def render_figures(
    summary,
    ranking: FeatureRanking,
    cfg: RunConfig,
    out_dir: Path,
    prefix: str = "",
    schema: Optional[WindowSchema] = None,
    train: Optional[SampleSet] = None,
) -> List[Path]:
    """Scatter and top-feature curves for one summary, plus histograms when data is given."""
    rc = cfg.render
    style = render.PlotStyle(
        r_min=rc.r_min, r_max=rc.r_max, cell_size=rc.cell_size, vmax=rc.vmax,
        font_family=rc.font_family, font_size=rc.font_size,
    )
    written = [render.write_svg(
        render.render_temporal_scatter(summary, style, ranking, rc.min_score or None),
        out_dir / f"{prefix}scatter.svg",
    )]
    top = ranking.features[: rc.curve_top]
    curves = analytics.importance_curves(summary, top)
    written.append(render.write_svg(
        render.render_curves(curves, style, title=f"{summary.explainer.value} top {len(top)} | {summary.group_key}"),
        out_dir / f"{prefix}curves.svg",
    ))
    if schema is not None and train is not None:
        for feature in top:
            values = feature_values(train, schema, feature)
            written.append(render.write_svg(
                render.render_histogram(values, rc.histogram_bins, style, title=feature),
                out_dir / f"hist_{feature}.svg",
            ))
    return written


def run_explanation_pipeline(
    dataset: Dataset,
    handle: PredictorHandle,
    cfg: RunConfig,
    out_dir: Union[str, Path],
) -> ExplanationRun:
    """
    Explain the correctly predicted positives and write every artifact under ``out_dir``.

    Writes attributions, the cohort summary, month/season group summaries
    (when event dates are present), the ranking, figures and a manifest.
    Equal inputs and config reproduce byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    schema = dataset.window_schema
    ex = cfg.explainer
    files: List[Path] = []
    manifest: Dict[str, Any] = {
        "format": "wildxai-run",
        "version": 1,
        "explainer": ex.method,
        "seed": cfg.run.seed,
        "dataset_hash": dataset_digest(dataset),
        "model_id": handle.id,
        "model_kind": handle.kind.value,
        "resolved_config": cfg.to_lines(),
    }

    if ex.method == "permutation":
        split = dataset.split(ex.split)
        importance = explainers.permutation_importance(
            handle, split, ex.permutation_repeats, cfg.run.seed, schema.feature_names
        )
        ranking = importance.to_ranking()
        files.append(artifacts.write_permutation(importance, out_dir / "permutation.csv"))
        files.append(artifacts.write_ranking(ranking, out_dir / "ranking.csv"))
        cohort_size = len(split)
        manifest["permutation"] = {"repeats": ex.permutation_repeats, "baseline_accuracy": importance.baseline_accuracy}
    else:
        cohort, background, scheme, attributions, report = explain_cohort(dataset, handle, cfg)
        cohort_size = len(cohort)
        summary = analytics.average_attributions(attributions)
        ranking = analytics.rank_features(summary)

        files.append(artifacts.write_attributions(attributions, out_dir / "attributions.csv"))
        files.append(artifacts.write_summaries([summary], out_dir / "summary.csv"))
        files.append(artifacts.write_ranking(ranking, out_dir / "ranking.csv"))
        files.extend(render_figures(summary, ranking, cfg, out_dir, schema=schema, train=dataset.split("train")))

        if all(d is not None for d in cohort.event_dates):
            calendar = derive_calendar_groups(cohort)
            for by in ("month", "season"):
                grouped = analytics.group_summaries(attributions, calendar, by)
                files.append(artifacts.write_summaries(list(grouped.summaries.values()), out_dir / f"summary_{by}.csv"))
                for key, group_summary in grouped.summaries.items():
                    prefix = key.replace("=", "_") + "_"
                    files.extend(render_figures(group_summary, ranking, cfg, out_dir, prefix=prefix))
                manifest[f"empty_{by}_groups"] = grouped.empty_groups
        else:
            logger.warning("Cohort lacks event dates; skipping month and season summaries")

        manifest.update({
            "accuracy": report.accuracy,
            "cohort": {"split": ex.split, "size": cohort_size, "sample_ids": [int(i) for i in cohort.sample_ids]},
            "players": {"granularity": scheme.granularity, "M": scheme.M, "fused_groups": list(scheme.fused_groups)},
            "background": {
                "mode": background.mode, "size": background.size,
                "digest": background.digest(), "sample_ids": list(background.sample_ids),
            },
            "budgets": {
                "num_coalitions": ex.num_coalitions if ex.num_coalitions is not None else 2 * scheme.M + 2048,
                "num_perturbations": ex.num_perturbations if ex.num_perturbations is not None else 10 * scheme.M,
                "kernel_width": ex.kernel_width,
                "top_k": ex.top_k,
                "ridge_alpha": ex.ridge_alpha,
            },
        })

    manifest["files"] = {p.name: artifacts.file_digest(p) for p in sorted(files)}
    manifest_path = artifacts.write_manifest(manifest, out_dir / "manifest.json")
    logger.info(f"Explanation run complete: {cohort_size} samples, {len(files)} files in {out_dir}")
    return ExplanationRun(
        out_dir=str(out_dir),
        explainer=ex.method,
        cohort_size=cohort_size,
        files=sorted(p.name for p in files),
        manifest=str(manifest_path),
    )
