"""Model-agnostic attribution methods over N x L windows.

All explainers work on a PlayerScheme: coalition z in {0,1}^M switches
players on (the sample's cells) or off (background cells). Randomness comes
only from ``derive_rng(seed, method, sample_id)``.
"""
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import binom
from sklearn.linear_model import Ridge

from wildxai.exceptions import (
    ConfigError,
    EmptyInputError,
    EnumerationLimitError,
    InsufficientSamplesError,
    KernelWidthError,
    RankError,
)
from wildxai.models.attribution import (
    Attribution,
    AttributionDiagnostics,
    BackgroundSet,
    ExplainerKind,
    PermutationImportance,
    PermutationScore,
    PlayerScheme,
)
from wildxai.models.dataset import SampleSet, WindowedSample, WindowSchema
from wildxai.services.predictors import PredictorHandle, evaluate_accuracy
from wildxai.services.rng import derive_rng

logger = logging.getLogger(__name__)

EXACT_PLAYER_LIMIT = 20
# rows per predict_proba call when evaluating composites
MAX_BATCH_ROWS = 8192


def build_player_scheme(schema: WindowSchema, granularity: str = "cell", fuse_groups: bool = True) -> PlayerScheme:
    """
    Partition the N x L cells into players.

    A fused one-hot group becomes one player per day (cell granularity) or a
    single player (feature granularity), placed where its first member sits.

    Args:
        schema: Window schema
        granularity: ``cell`` (feature@day players) or ``feature`` (whole rows)
        fuse_groups: Fuse one-hot group members into shared players

    Returns:
        PlayerScheme: The player partition
    """
    if granularity not in ("cell", "feature"):
        raise ConfigError(f"unknown player granularity {granularity!r}")
    N, L = schema.shape
    groups = schema.groups if fuse_groups else {}
    member_of = {i: g for g, members in groups.items() for i in members}

    units: List[Tuple[str, List[int]]] = []
    seen = set()
    for i, feat in enumerate(schema.features):
        group = member_of.get(i)
        if group is None:
            units.append((feat.name, [i]))
        elif group not in seen:
            seen.add(group)
            units.append((group, groups[group]))

    players: List[Tuple[int, ...]] = []
    labels: List[str] = []
    for name, rows in units:
        if granularity == "feature":
            players.append(tuple(r * L + t for r in rows for t in range(L)))
            labels.append(name)
        else:
            for t in range(L):
                players.append(tuple(r * L + t for r in rows))
                labels.append(f"{name}@{t + 1}")

    return PlayerScheme(
        granularity=granularity,
        shape=(N, L),
        players=tuple(players),
        labels=tuple(labels),
        fused_groups=tuple(sorted(groups)),
    )


def draw_background(train: SampleSet, size: int = 100, seed: int = 0, mode: str = "sample") -> BackgroundSet:
    """
    Draw the reference distribution from the training split.

    ``sample`` mode takes ``size`` distinct training windows (all of them
    when the split is smaller); ``mean`` mode uses the single mean window.
    """
    if not len(train):
        raise EmptyInputError("cannot draw a background from an empty training split")
    if size < 1:
        raise InsufficientSamplesError(f"background size must be >= 1, got {size}")
    if mode == "mean":
        return BackgroundSet(values=train.values.mean(axis=0)[None], seed=seed, mode="mean")
    if mode != "sample":
        raise ConfigError(f"unknown background mode {mode!r}")

    if size >= len(train):
        idx = np.arange(len(train))
    else:
        idx = np.sort(derive_rng(seed, "background").choice(len(train), size=size, replace=False))
    logger.info(f"Drew background of {len(idx)} training windows (seed {seed})")
    return BackgroundSet(
        values=train.values[idx],
        seed=seed,
        mode="sample",
        sample_ids=tuple(int(i) for i in train.sample_ids[idx]),
    )


def coalition_values(
    handle: PredictorHandle,
    x: np.ndarray,
    background: BackgroundSet,
    scheme: PlayerScheme,
    coalitions: np.ndarray,
) -> np.ndarray:
    """v(S) for every coalition row: mean prediction over background composites."""
    N, L = scheme.shape
    x_flat = np.asarray(x, dtype=np.float64).reshape(-1)
    bg_flat = background.values.reshape(background.size, -1)
    masks = scheme.cell_masks(coalitions)
    per_chunk = max(1, MAX_BATCH_ROWS // background.size)

    out = np.empty(len(masks))
    for start in range(0, len(masks), per_chunk):
        chunk = masks[start:start + per_chunk]
        composite = np.where(chunk[:, None, :], x_flat[None, None, :], bg_flat[None, :, :])
        predictions = handle.predict_proba(composite.reshape(-1, N, L))
        out[start:start + len(chunk)] = predictions.reshape(len(chunk), background.size).mean(axis=1)
    return out


def _bits(indices: np.ndarray, M: int) -> np.ndarray:
    return ((indices[:, None] >> np.arange(M)) & 1).astype(np.int8)


def _attribution(
    kind: ExplainerKind,
    sample: WindowedSample,
    scheme: PlayerScheme,
    feature_names: Sequence[str],
    base: float,
    phi: np.ndarray,
    prediction: float,
    evaluated: int,
    seed: int,
) -> Attribution:
    residual = float(base + math.fsum(phi) - prediction)
    return Attribution(
        explainer=kind,
        base_value=float(base),
        values=scheme.expand(phi),
        feature_names=tuple(feature_names),
        sample_id=sample.sample_id,
        seed=seed,
        player_values=np.asarray(phi, dtype=np.float64),
        diagnostics=AttributionDiagnostics(coalitions_evaluated=evaluated, residual=residual, prediction=prediction),
    )


def exact_shapley(
    handle: PredictorHandle,
    sample: WindowedSample,
    background: BackgroundSet,
    scheme: PlayerScheme,
) -> Attribution:
    """
    Exact Shapley values by enumerating all 2^M coalitions.

    Args:
        handle: Model to explain
        sample: The window being explained
        background: Reference windows for absent players
        scheme: Player partition (M <= 20)

    Returns:
        Attribution: base_value = v(empty set); values sum to f(x) - base
    """
    M = scheme.M
    if M > EXACT_PLAYER_LIMIT:
        raise EnumerationLimitError(
            f"exact enumeration needs M <= {EXACT_PLAYER_LIMIT} players, got {M}; use kernel_shap instead",
            players=M,
        )
    count = 1 << M
    index = np.arange(count, dtype=np.int64)
    v = np.empty(count)
    step = max(1, MAX_BATCH_ROWS // background.size)
    for start in range(0, count, step):
        chunk = index[start:start + step]
        v[chunk] = coalition_values(handle, sample.values, background, scheme, _bits(chunk, M))

    sizes = np.zeros(count, dtype=np.int64)
    for j in range(M):
        sizes += (index >> j) & 1
    weight_by_size = 1.0 / (M * binom(M - 1, np.arange(M)))

    phi = np.empty(M)
    for i in range(M):
        without = index[((index >> i) & 1) == 0]
        phi[i] = np.sum(weight_by_size[sizes[without]] * (v[without | (1 << i)] - v[without]))

    logger.debug(f"Exact Shapley for sample {sample.sample_id}: {count} coalitions")
    return _attribution(
        ExplainerKind.EXACT_SHAPLEY, sample, scheme, handle.feature_names,
        v[0], phi, float(v[-1]), count, background.seed,
    )


def shapley_kernel_weight(M: int, size: int) -> float:
    """(M - 1) / (C(M, s) * s * (M - s)) for a coalition of ``size`` players."""
    return (M - 1) / (binom(M, size) * size * (M - size))


def _all_coalitions(M: int) -> Tuple[np.ndarray, np.ndarray]:
    Z = _bits(np.arange(1, (1 << M) - 1, dtype=np.int64), M)
    sizes = Z.sum(axis=1)
    weights = np.array([shapley_kernel_weight(M, int(s)) for s in sizes])
    return Z, weights


def _sampled_coalitions(M: int, budget: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Paired coalition sampling.

    Sizes s and M - s are visited together; a size is enumerated exhaustively
    while the remaining budget covers its expected share, the rest is sampled
    in proportion to the kernel mass with duplicate draws folded into weights.
    """
    num_sizes = int(np.ceil((M - 1) / 2.0))
    num_paired = int(np.floor((M - 1) / 2.0))
    size_weight = np.array([(M - 1.0) / (s * (M - s)) for s in range(1, num_sizes + 1)])
    size_weight[:num_paired] *= 2
    size_weight /= size_weight.sum()

    rows: List[np.ndarray] = []
    weights: List[float] = []
    num_full = 0
    left = budget
    remaining = size_weight.copy()
    for s in range(1, num_sizes + 1):
        paired = s <= num_paired
        n_subsets = binom(M, s) * (2 if paired else 1)
        if left * remaining[s - 1] / n_subsets < 1.0 - 1e-8:
            break
        num_full += 1
        left -= int(n_subsets)
        if remaining[s - 1] < 1.0:
            remaining /= 1.0 - remaining[s - 1]
        w = size_weight[s - 1] / binom(M, s) / (2.0 if paired else 1.0)
        for members in itertools.combinations(range(M), s):
            z = np.zeros(M, dtype=np.int8)
            z[list(members)] = 1
            rows.append(z)
            weights.append(w)
            if paired:
                rows.append(1 - z)
                weights.append(w)

    n_fixed = len(rows)
    samples_left = budget - n_fixed
    if num_full != num_sizes and samples_left > 0:
        draw_weight = size_weight.copy()
        draw_weight[:num_paired] /= 2
        draw_weight = draw_weight[num_full:]
        draw_weight /= draw_weight.sum()
        draws = rng.choice(len(draw_weight), 4 * samples_left, p=draw_weight)
        used: Dict[bytes, Tuple[int, bool]] = {}
        for draw in draws:
            if samples_left <= 0:
                break
            s = int(draw) + num_full + 1
            z = np.zeros(M, dtype=np.int8)
            z[rng.permutation(M)[:s]] = 1
            key = z.tobytes()
            if key in used:
                at, has_pair = used[key]
                weights[at] += 1.0
                if has_pair:
                    weights[at + 1] += 1.0
                continue
            at = len(rows)
            rows.append(z)
            weights.append(1.0)
            samples_left -= 1
            has_pair = s <= num_paired and samples_left > 0
            if has_pair:
                rows.append(1 - z)
                weights.append(1.0)
                samples_left -= 1
            used[key] = (at, has_pair)
        if len(rows) > n_fixed:
            mass_left = size_weight[num_full:].sum()
            sampled = np.asarray(weights[n_fixed:])
            weights[n_fixed:] = list(sampled * mass_left / sampled.sum())

    return np.asarray(rows, dtype=np.int8).reshape(-1, M), np.asarray(weights)


def _constrained_least_squares(Z: np.ndarray, y: np.ndarray, w: np.ndarray, total: float) -> np.ndarray:
    """Weighted least squares for phi subject to sum(phi) == total (last unknown eliminated)."""
    M = Z.shape[1]
    X = Z[:, :-1].astype(np.float64) - Z[:, -1:].astype(np.float64)
    target = y - Z[:, -1] * total
    root = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(X * root[:, None], target * root, rcond=None)
    if rank < M - 1:
        raise RankError(
            f"coalition system has rank {rank} < {M - 1}; increase num_coalitions",
            rank=int(rank),
            players=M,
        )
    return np.append(coef, total - coef.sum())


def kernel_shap(
    handle: PredictorHandle,
    sample: WindowedSample,
    background: BackgroundSet,
    scheme: PlayerScheme,
    num_coalitions: Optional[int] = None,
    seed: int = 0,
) -> Attribution:
    """
    KernelSHAP: Shapley-kernel weighted regression on coalition indicators.

    All proper non-empty coalitions are used when the budget reaches
    2^M - 2; otherwise coalitions are sampled from
    ``derive_rng(seed, "kernel_shap", sample_id)``. Efficiency is exact.

    Args:
        handle: Model to explain
        sample: The window being explained
        background: Reference windows for absent players
        scheme: Player partition
        num_coalitions: Coalition budget (default 2M + 2048)
        seed: Run seed

    Returns:
        Attribution: Player values expanded to the N x L grid
    """
    M = scheme.M
    budget = num_coalitions if num_coalitions is not None else 2 * M + 2048
    prediction = float(handle.predict_proba(sample.values[None])[0])
    base = float(coalition_values(handle, sample.values, background, scheme, np.zeros((1, M), dtype=np.int8))[0])
    total = prediction - base

    if M == 1:
        return _attribution(
            ExplainerKind.KERNEL_SHAP, sample, scheme, handle.feature_names, base, np.array([total]), prediction, 0, seed
        )
    if budget < M + 2:
        raise InsufficientSamplesError(
            f"num_coalitions={budget} is below the minimum M + 2 = {M + 2}", players=M, budget=budget
        )

    if budget >= (1 << M) - 2:
        Z, w = _all_coalitions(M)
    else:
        Z, w = _sampled_coalitions(M, budget, derive_rng(seed, "kernel_shap", sample.sample_id))

    y = coalition_values(handle, sample.values, background, scheme, Z) - base
    phi = _constrained_least_squares(Z, y, w, total)
    logger.debug(f"KernelSHAP for sample {sample.sample_id}: {len(Z)} coalitions, M={M}")
    return _attribution(
        ExplainerKind.KERNEL_SHAP, sample, scheme, handle.feature_names, base, phi, prediction, len(Z), seed
    )


def lime_explain(
    handle: PredictorHandle,
    sample: WindowedSample,
    scheme: PlayerScheme,
    background: BackgroundSet,
    num_perturbations: Optional[int] = None,
    kernel_width: Optional[float] = None,
    top_k: Optional[int] = None,
    seed: int = 0,
    ridge_alpha: float = 1.0,
) -> Attribution:
    """
    LIME surrogate on the binary keep/replace representation.

    Switched-off players take the background mean window. The first
    perturbation is the unmodified sample; every other row switches off a
    uniformly sized random subset. Neighbours are weighted by
    ``exp(-d^2 / sigma^2)`` with d^2 the Hamming count of switched-off players
    (d is the Euclidean distance between binary masks).

    Returns:
        Attribution: Ridge coefficients as values, intercept as base_value
    """
    M = scheme.M
    n = num_perturbations if num_perturbations is not None else 10 * M
    sigma = kernel_width if kernel_width is not None else 0.75 * math.sqrt(M)
    if not np.isfinite(sigma) or sigma <= 0:
        raise KernelWidthError(f"kernel_width must be a positive number, got {sigma}")
    if n < 2:
        raise InsufficientSamplesError(f"LIME needs at least 2 perturbations, got {n}")
    if top_k is not None and not 1 <= top_k <= M:
        raise ConfigError(f"top_k must be in 1..{M}, got {top_k}")

    rng = derive_rng(seed, "lime", sample.sample_id)
    Z = np.ones((n, M), dtype=np.int8)
    for row in range(1, n):
        off = rng.choice(M, size=int(rng.integers(1, M + 1)), replace=False)
        Z[row, off] = 0

    off_window = BackgroundSet(values=background.mean[None], seed=background.seed, mode="mean")
    y = coalition_values(handle, sample.values, off_window, scheme, Z)
    hamming = (M - Z.sum(axis=1)).astype(np.float64)
    weights = np.exp(-hamming / sigma**2)
    if weights[1:].sum() == 0.0:
        raise KernelWidthError(
            f"kernel width {sigma:g} gives zero weight to every perturbed neighbour; increase kernel_width"
        )

    surrogate = Ridge(alpha=ridge_alpha, fit_intercept=True).fit(Z, y, sample_weight=weights)
    coef = surrogate.coef_.astype(np.float64)
    intercept = float(surrogate.intercept_)
    if top_k is not None and top_k < M:
        keep = np.sort(np.argsort(-np.abs(coef), kind="stable")[:top_k])
        surrogate = Ridge(alpha=ridge_alpha, fit_intercept=True).fit(Z[:, keep], y, sample_weight=weights)
        coef = np.zeros(M)
        coef[keep] = surrogate.coef_
        intercept = float(surrogate.intercept_)

    logger.debug(f"LIME for sample {sample.sample_id}: {n} perturbations, sigma={sigma:.3f}")
    return _attribution(ExplainerKind.LIME, sample, scheme, handle.feature_names, intercept, coef, float(y[0]), n, seed)


def permutation_importance(
    handle: PredictorHandle,
    split: SampleSet,
    repeats: int = 10,
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> PermutationImportance:
    """
    Mean accuracy drop when one feature's whole row is shuffled across samples.

    Each (feature, repeat) pair draws its permutation from its own stream.
    """
    if not len(split):
        raise EmptyInputError("permutation importance needs a non-empty split")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    names = list(feature_names or handle.feature_names)
    baseline = evaluate_accuracy(handle, split).accuracy
    labels = split.labels

    scores = []
    for i, name in enumerate(names):
        accuracies = np.empty(repeats)
        for r in range(repeats):
            order = derive_rng(seed, "permutation", i, r).permutation(len(split))
            shuffled = np.array(split.values)
            shuffled[:, i, :] = split.values[order, i, :]
            predictions = (handle.predict_proba(shuffled) >= 0.5).astype(np.int64)
            accuracies[r] = float(np.mean(predictions == labels))
        scores.append(PermutationScore(feature=name, score=float(baseline - accuracies.mean()), std=float(accuracies.std())))
        logger.debug(f"Permutation importance {name}: {scores[-1].score:.4f}")

    logger.info(f"Permutation importance over {len(names)} features, {repeats} repeats, baseline {baseline:.4f}")
    return PermutationImportance(baseline_accuracy=baseline, repeats=repeats, seed=seed, scores=tuple(scores))


def explain_samples(
    handle: PredictorHandle,
    samples: SampleSet,
    background: BackgroundSet,
    scheme: PlayerScheme,
    method: str = "kernel_shap",
    seed: int = 0,
    threads: int = 1,
    num_coalitions: Optional[int] = None,
    num_perturbations: Optional[int] = None,
    kernel_width: Optional[float] = None,
    top_k: Optional[int] = None,
    ridge_alpha: float = 1.0,
) -> List[Attribution]:
    """
    Explain every sample, fanning out over threads when the handle allows it.

    Results are returned in sample order and do not depend on ``threads``.
    """
    def explain(i: int) -> Attribution:
        sample = samples.sample(i)
        if method == ExplainerKind.EXACT_SHAPLEY.value:
            return exact_shapley(handle, sample, background, scheme)
        if method == ExplainerKind.KERNEL_SHAP.value:
            return kernel_shap(handle, sample, background, scheme, num_coalitions, seed)
        if method == ExplainerKind.LIME.value:
            return lime_explain(handle, sample, scheme, background, num_perturbations, kernel_width, top_k, seed, ridge_alpha)
        raise ConfigError(f"method {method!r} does not produce per-sample attributions")

    workers = threads if handle.supports_concurrency else 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        attributions = list(pool.map(explain, range(len(samples))))
    logger.info(f"Explained {len(attributions)} samples with {method} (M={scheme.M}, threads={workers})")
    return attributions
