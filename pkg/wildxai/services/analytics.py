"""Cohort selection, averaging, grouping, ranking and explainer agreement."""
import logging
import math
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import spearmanr

from wildxai.exceptions import (
    EmptyCohortError,
    EmptyInputError,
    MissingCalendarError,
    MixedAttributionsError,
    RankingError,
    UnknownFeatureError,
)
from wildxai.models.attribution import (
    Agreement,
    Attribution,
    AttributionSummary,
    Direction,
    FeatureRanking,
    GroupedSummaries,
    RankingEntry,
)
from wildxai.models.dataset import CalendarGroup, SampleSet
from wildxai.models.predictor import AccuracyReport
from wildxai.services.predictors import PredictorHandle, evaluate_accuracy

logger = logging.getLogger(__name__)

SEASON_ORDER = ("winter", "spring", "summer", "fall")


def select_explained_samples(
    split: SampleSet,
    handle: Optional[PredictorHandle] = None,
    report: Optional[AccuracyReport] = None,
) -> List[int]:
    """
    Correctly predicted positives: label 1 and probability >= 0.5.

    Args:
        split: Labeled split
        handle: Predictor to evaluate (skipped when ``report`` is given)
        report: Previously computed accuracy report on ``split``

    Returns:
        List[int]: Sample ids in split order
    """
    if report is None:
        if handle is None:
            raise EmptyInputError("select_explained_samples needs a handle or an accuracy report")
        report = evaluate_accuracy(handle, split)
    chosen = (report.labels == 1) & (report.predictions == 1)
    ids = [int(i) for i in report.sample_ids[chosen]]
    if not ids:
        positives = int((report.labels == 1).sum())
        predicted = int(report.predictions.sum())
        raise EmptyCohortError(
            f"no correctly predicted positives among {len(report.sample_ids)} samples "
            f"({positives} positive labels, {predicted} positive predictions)",
            samples=len(report.sample_ids),
            positives=positives,
            predicted_positive=predicted,
        )
    logger.info(f"Selected {len(ids)} correctly predicted positives of {len(report.sample_ids)} samples")
    return ids


def _fmean(stack: np.ndarray) -> np.ndarray:
    """Cell-wise mean with compensated summation (order independent)."""
    n = stack.shape[0]
    flat = stack.reshape(n, -1)
    return np.array([math.fsum(flat[:, c]) / n for c in range(flat.shape[1])]).reshape(stack.shape[1:])


def average_attributions(
    attributions: Sequence[Attribution],
    selection: str = "correct_positive",
    group_key: str = "all",
) -> AttributionSummary:
    """
    Element-wise mean of attributions from one explainer.

    Raises:
        EmptyInputError: No attributions given
        MixedAttributionsError: Explainers, feature sets or shapes differ
    """
    if not attributions:
        raise EmptyInputError("cannot average an empty list of attributions")
    first = attributions[0]
    for a in attributions[1:]:
        if a.explainer != first.explainer:
            raise MixedAttributionsError(
                f"cannot average {first.explainer.value} with {a.explainer.value} attributions"
            )
        if a.feature_names != first.feature_names or a.values.shape != first.values.shape:
            raise MixedAttributionsError(f"attribution for sample {a.sample_id} has a different feature grid")

    stack = np.stack([a.values for a in attributions])
    return AttributionSummary(
        explainer=first.explainer,
        values=_fmean(stack),
        abs_values=_fmean(np.abs(stack)),
        base_value=math.fsum(a.base_value for a in attributions) / len(attributions),
        count=len(attributions),
        feature_names=first.feature_names,
        selection=selection,
        group_key=group_key,
        sample_ids=tuple(a.sample_id for a in attributions),
    )


def summary_of(attribution: Attribution) -> AttributionSummary:
    """Wrap one attribution as a count-1 summary for single-sample plots."""
    return average_attributions([attribution], selection="single", group_key=f"sample={attribution.sample_id}")


def group_summaries(
    attributions: Sequence[Attribution],
    calendar: Dict[int, CalendarGroup],
    by: str = "month",
    selection: str = "correct_positive",
) -> GroupedSummaries:
    """
    One summary per non-empty month or season; empty groups are listed.

    Args:
        attributions: Cohort attributions
        calendar: sample_id -> CalendarGroup
        by: ``month`` or ``season``
    """
    if by not in ("month", "season"):
        raise RankingError(f"unknown grouping {by!r}; use month or season")
    missing = sorted(a.sample_id for a in attributions if a.sample_id not in calendar)
    if missing:
        raise MissingCalendarError(
            f"no calendar group for sample_ids {', '.join(str(i) for i in missing)}", sample_ids=missing
        )

    keys = list(range(1, 13)) if by == "month" else list(SEASON_ORDER)
    buckets: Dict[object, List[Attribution]] = {k: [] for k in keys}
    for a in attributions:
        group = calendar[a.sample_id]
        buckets[group.month if by == "month" else group.season].append(a)

    summaries = {}
    empty = []
    for key in keys:
        label = f"{by}={key}"
        if buckets[key]:
            summaries[label] = average_attributions(buckets[key], selection=selection, group_key=label)
        else:
            empty.append(label)
    if empty:
        logger.info(f"Groups without samples: {', '.join(empty)}")
    return GroupedSummaries(by=by, summaries=summaries, empty_groups=empty)


def _full_ranking(source: Union[AttributionSummary, Sequence[Attribution]]) -> FeatureRanking:
    if isinstance(source, AttributionSummary):
        summary = source
    else:
        summary = average_attributions(list(source), selection="ranking")
    scores = summary.abs_values.mean(axis=1)
    signed = summary.values.mean(axis=1)
    entries = sorted(
        (RankingEntry(feature=f, score=float(scores[i]), mean_value=float(signed[i]))
         for i, f in enumerate(summary.feature_names)),
        key=lambda e: (-e.score, e.feature),
    )
    return FeatureRanking(entries=tuple(entries), direction="most", source=summary.explainer.value)


def rank_features(
    source: Union[AttributionSummary, Sequence[Attribution]],
    k: Optional[int] = None,
    direction: Direction = "most",
) -> FeatureRanking:
    """
    Rank features by mean |value| over days and cohort samples.

    ``most`` returns the first k of the descending ranking (ties go
    alphabetically); ``least`` returns the first k of that list reversed.

    Args:
        source: Summary or attributions to rank
        k: Slice size (default: every feature)
        direction: ``most`` or ``least``

    Returns:
        FeatureRanking: The requested slice
    """
    full = _full_ranking(source)
    n = len(full)
    k = n if k is None else k
    if not 1 <= k <= n:
        raise RankingError(f"k must be between 1 and {n}, got {k}", k=k, features=n)
    if direction not in ("most", "least"):
        raise RankingError(f"unknown direction {direction!r}")
    entries = full.entries if direction == "most" else tuple(reversed(full.entries))
    return FeatureRanking(entries=entries[:k], direction=direction, source=full.source)


def filter_ranking(ranking: FeatureRanking, min_score: float) -> FeatureRanking:
    """Drop features scoring below ``min_score`` (display filter)."""
    kept = tuple(e for e in ranking.entries if e.score >= min_score)
    return FeatureRanking(entries=kept, direction=ranking.direction, source=ranking.source)


def importance_curves(summary: AttributionSummary, features: Sequence[str]) -> Dict[str, np.ndarray]:
    """Day-indexed mean attribution per requested feature, unmodified."""
    unknown = [f for f in features if f not in summary.feature_names]
    if unknown:
        raise UnknownFeatureError(f"features not in summary: {', '.join(unknown)}", features=unknown)
    return {f: np.array(summary.row(f)) for f in features}


def explainer_agreement(ranking_a: FeatureRanking, ranking_b: FeatureRanking, k: int = 5) -> Agreement:
    """
    Spearman correlation between two full rankings and top-k sign agreement.

    Sign agreement is measured over the top k features of ``ranking_a``.
    """
    if set(ranking_a.features) != set(ranking_b.features) or len(ranking_a) != len(ranking_b):
        only_a = sorted(set(ranking_a.features) - set(ranking_b.features))
        only_b = sorted(set(ranking_b.features) - set(ranking_a.features))
        raise RankingError(f"rankings cover different features (only in a: {only_a}, only in b: {only_b})")
    n = len(ranking_a)
    k = min(k, n)
    if k < 1:
        raise RankingError("agreement needs k >= 1")

    position_b = {f: i for i, f in enumerate(ranking_b.features)}
    if n < 2:
        rho = 1.0
    else:
        rho = float(spearmanr(np.arange(n), [position_b[f] for f in ranking_a.features])[0])

    signed_b = {e.feature: e.mean_value for e in ranking_b.entries}
    top = ranking_a.entries[:k]
    matches = sum(np.sign(e.mean_value) == np.sign(signed_b[e.feature]) for e in top)
    return Agreement(
        spearman_rho=rho,
        sign_match_rate=matches / k,
        k=k,
        compared=tuple(e.feature for e in top),
    )
