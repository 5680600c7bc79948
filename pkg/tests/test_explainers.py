"""Tests for the attribution methods: oracle agreement, axioms and determinism."""
import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import make_schema, stump_model
from wildxai.exceptions import (
    ConfigError,
    EnumerationLimitError,
    InsufficientSamplesError,
    KernelWidthError,
)
from wildxai.models.attribution import BackgroundSet
from wildxai.models.dataset import FeatureSpec, SampleSet, WindowedSample, WindowSchema
from wildxai.models.predictor import PredictorKind, TreeEnsembleConfig
from wildxai.services.explainers import (
    build_player_scheme,
    coalition_values,
    draw_background,
    exact_shapley,
    explain_samples,
    kernel_shap,
    lime_explain,
    permutation_importance,
    shapley_kernel_weight,
)
from wildxai.services.predictors import GradientBoostingPredictor, LogisticPredictor, PredictorHandle, train_logistic
from wildxai.services.schemas import california_schema
from wildxai.services.trees import Tree

SHAPES = [(2, 2), (1, 5), (3, 2), (2, 4), (4, 2), (5, 2), (3, 3), (2, 5), (3, 4), (4, 3), (6, 2)]


def random_case(seed, shape, background_size=3, **kwargs):
    rng = np.random.default_rng(seed)
    N, L = shape
    model = stump_model(rng, shape, **kwargs)
    scheme = build_player_scheme(make_schema([f"f{i}" for i in range(N)], L))
    sample = WindowedSample(values=rng.normal(size=shape), label=1, sample_id=seed)
    background = BackgroundSet(values=rng.normal(size=(background_size, N, L)), seed=seed)
    return model, scheme, sample, background


def test_player_scheme_cells_and_groups():
    schema = california_schema()
    cells = build_player_scheme(schema, "cell", fuse_groups=True)
    assert cells.M == (8 + 1) * 11
    assert "season@1" in cells.labels
    assert cells.fused_groups == ("season",)
    features = build_player_scheme(schema, "feature", fuse_groups=False)
    assert features.M == 11
    assert features.labels[0] == "precipitation"
    with pytest.raises(ConfigError):
        build_player_scheme(schema, "pixel")


def test_expand_splits_player_value_evenly():
    scheme = build_player_scheme(california_schema(), "feature", fuse_groups=True)
    values = np.arange(scheme.M, dtype=float)
    grid = scheme.expand(values)
    assert grid.shape == (11, 11)
    assert grid.sum() == pytest.approx(values.sum())
    season_rows = grid[8:11]
    assert np.allclose(season_rows, values[-1] / 33)


@pytest.mark.parametrize("seed", range(50))
def test_kernel_shap_matches_exact_under_full_enumeration(seed):
    shape = SHAPES[seed % len(SHAPES)]
    model, scheme, sample, background = random_case(seed, shape)
    assert 4 <= scheme.M <= 12
    exact = exact_shapley(model, sample, background, scheme)
    kernel = kernel_shap(model, sample, background, scheme, num_coalitions=2 ** scheme.M)
    assert np.max(np.abs(exact.player_values - kernel.player_values)) <= 1e-6
    assert kernel.base_value == pytest.approx(exact.base_value, abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("block", range(20))
def test_efficiency(block):
    # 20 blocks x 25 cases x 2 explainers = 1,000 explanations
    for seed in range(25 * block, 25 * block + 25):
        check_efficiency(seed)


def check_efficiency(seed):
    shape = SHAPES[seed % len(SHAPES)]
    model, scheme, sample, background = random_case(100 + seed, shape)
    for attribution in (
        exact_shapley(model, sample, background, scheme),
        kernel_shap(model, sample, background, scheme, num_coalitions=2 ** scheme.M),
    ):
        f_x = float(model.predict_proba(sample.values)[0])
        assert abs(attribution.base_value + attribution.player_values.sum() - f_x) <= 1e-6
        assert attribution.values.sum() == pytest.approx(attribution.player_values.sum(), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_sampled_kernel_shap_is_still_efficient(seed):
    model, scheme, sample, background = random_case(700 + seed, (4, 3))
    result = kernel_shap(model, sample, background, scheme, num_coalitions=60, seed=seed)
    f_x = float(model.predict_proba(sample.values)[0])
    assert abs(result.base_value + result.player_values.sum() - f_x) <= 1e-6


def test_null_player_gets_zero():
    rng = np.random.default_rng(7)
    model = stump_model(rng, (3, 2), unused_columns=(2, 3))
    scheme = build_player_scheme(make_schema(["a", "b", "c"], 2))
    sample = WindowedSample(values=rng.normal(size=(3, 2)), label=1, sample_id=1)
    background = BackgroundSet(values=rng.normal(size=(4, 3, 2)), seed=0)
    phi = exact_shapley(model, sample, background, scheme).player_values
    assert abs(phi[2]) <= 1e-9 and abs(phi[3]) <= 1e-9


def test_symmetric_players_share_credit():
    model = LogisticPredictor.from_weights([1.0, 1.0, 0.5], input_shape=(3, 1))
    scheme = build_player_scheme(make_schema(["x0", "x1", "x2"], 1))
    sample = WindowedSample(values=np.array([[1.0], [1.0], [2.0]]), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((1, 3, 1)), seed=0)
    for attribution in (
        exact_shapley(model, sample, background, scheme),
        kernel_shap(model, sample, background, scheme),
    ):
        assert attribution.player_values[0] == pytest.approx(attribution.player_values[1], abs=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_sampled_kernel_shap_stays_close_to_exact(seed):
    model, scheme, sample, background = random_case(900 + seed, (10, 2), background_size=1, n_trees=10)
    assert scheme.M == 20
    exact = exact_shapley(model, sample, background, scheme)
    sampled = kernel_shap(model, sample, background, scheme, seed=seed)
    assert sampled.diagnostics.coalitions_evaluated <= 2 * 20 + 2048
    assert np.max(np.abs(exact.player_values - sampled.player_values)) <= 0.05


def test_kernel_shap_is_seeded():
    model, scheme, sample, background = random_case(3, (3, 4))
    one = kernel_shap(model, sample, background, scheme, num_coalitions=30, seed=5)
    two = kernel_shap(model, sample, background, scheme, num_coalitions=30, seed=5)
    assert np.array_equal(one.values, two.values)


def test_kernel_shap_budget_floor():
    model, scheme, sample, background = random_case(3, (3, 4))
    with pytest.raises(InsufficientSamplesError):
        kernel_shap(model, sample, background, scheme, num_coalitions=scheme.M + 1)


def test_single_player_gets_the_whole_difference():
    model = LogisticPredictor.from_weights([2.0], input_shape=(1, 1))
    scheme = build_player_scheme(make_schema(["x"], 1))
    sample = WindowedSample(values=np.array([[1.0]]), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((1, 1, 1)), seed=0)
    result = kernel_shap(model, sample, background, scheme)
    assert result.player_values[0] == pytest.approx(float(model.predict_proba(sample.values)[0]) - 0.5)


def test_exact_enumeration_limit():
    model, scheme, sample, background = random_case(1, (7, 3))
    with pytest.raises(EnumerationLimitError):
        exact_shapley(model, sample, background, scheme)


def test_shapley_kernel_weight():
    assert shapley_kernel_weight(4, 1) == pytest.approx(3 / (4 * 1 * 3))
    assert shapley_kernel_weight(4, 2) == pytest.approx(3 / (6 * 2 * 2))


def test_coalition_values_extremes():
    model, scheme, sample, background = random_case(4, (2, 2))
    v = coalition_values(model, sample.values, background, scheme, np.array([[0, 0, 0, 0], [1, 1, 1, 1]]))
    assert v[0] == pytest.approx(model.predict_proba(background.values).mean())
    assert v[1] == pytest.approx(model.predict_proba(sample.values)[0])


def test_lime_recovers_linear_ranking(linear_model):
    model, weights = linear_model
    scheme = build_player_scheme(make_schema([f"w{i}" for i in range(10)], 1))
    sample = WindowedSample(values=np.ones((10, 1)), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((1, 10, 1)), seed=0)
    result = lime_explain(model, sample, scheme, background, seed=0)
    coef = result.player_values
    assert result.diagnostics.coalitions_evaluated == 100
    assert spearmanr(np.abs(coef), np.abs(weights))[0] >= 0.9
    top = np.argsort(-np.abs(weights))[:5]
    assert np.all(np.sign(coef[top]) == np.sign(weights[top]))


def test_lime_top_k_zeroes_the_rest(linear_model):
    model, weights = linear_model
    scheme = build_player_scheme(make_schema([f"w{i}" for i in range(10)], 1))
    sample = WindowedSample(values=np.ones((10, 1)), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((1, 10, 1)), seed=0)
    result = lime_explain(model, sample, scheme, background, top_k=3, seed=0)
    assert np.count_nonzero(result.player_values) == 3


def test_lime_kernel_width_errors(linear_model):
    model, _ = linear_model
    scheme = build_player_scheme(make_schema([f"w{i}" for i in range(10)], 1))
    sample = WindowedSample(values=np.ones((10, 1)), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((1, 10, 1)), seed=0)
    with pytest.raises(KernelWidthError):
        lime_explain(model, sample, scheme, background, kernel_width=0.0)
    with pytest.raises(KernelWidthError):
        lime_explain(model, sample, scheme, background, kernel_width=1e-3)


def test_permutation_null_feature():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(500, 2, 1))
    labels = (values[:, 0, 0] > 0).astype(np.int64)
    split = SampleSet(sample_ids=np.arange(500), values=values, labels=labels, event_dates=(None,) * 500)
    model = LogisticPredictor.from_weights([5.0, 0.0], input_shape=(2, 1), feature_names=["signal", "noise"])
    result = permutation_importance(model, split, repeats=10, seed=0)
    scores = {s.feature: s.score for s in result.scores}
    assert abs(scores["noise"]) <= 0.01
    assert scores["signal"] > 0.3
    assert result.to_ranking().features == ["signal", "noise"]


def test_background_draws(synthetic_dataset):
    train = synthetic_dataset.split("train")
    one = draw_background(train, 20, seed=1)
    two = draw_background(train, 20, seed=1)
    assert one.size == 20 and one.digest() == two.digest()
    assert len(set(one.sample_ids)) == 20
    assert draw_background(train, 10_000, seed=1).size == len(train)
    mean = draw_background(train, 5, mode="mean")
    assert mean.size == 1
    assert np.allclose(mean.values[0], train.values.mean(axis=0))


def test_explain_samples_ignores_thread_count(synthetic_dataset):
    rng = np.random.default_rng(11)
    model = stump_model(rng, synthetic_dataset.window_schema.shape)
    cohort = synthetic_dataset.split("test").take(range(6))
    background = draw_background(synthetic_dataset.split("train"), 4, seed=0)
    scheme = build_player_scheme(synthetic_dataset.window_schema, "feature")
    serial = explain_samples(model, cohort, background, scheme, "kernel_shap", seed=3, threads=1, num_coalitions=200)
    parallel = explain_samples(model, cohort, background, scheme, "kernel_shap", seed=3, threads=4, num_coalitions=200)
    assert [a.sample_id for a in parallel] == list(cohort.sample_ids)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.values, b.values)
    with pytest.raises(ConfigError):
        explain_samples(model, cohort, background, scheme, "permutation")


def test_fused_group_is_one_player():
    schema = WindowSchema(
        features=(
            FeatureSpec(name="a"),
            FeatureSpec(name="on", group="g"),
            FeatureSpec(name="off", group="g"),
        ),
        window_length=1,
    )
    scheme = build_player_scheme(schema, "cell")
    assert scheme.labels == ("a@1", "g@1")
    model = LogisticPredictor.from_weights([1.0, 2.0, -1.0], input_shape=(3, 1))
    sample = WindowedSample(values=np.array([[0.0], [1.0], [0.0]]), label=1, sample_id=1)
    background = BackgroundSet(values=np.array([[[0.0], [0.0], [1.0]]]), seed=0)
    result = exact_shapley(model, sample, background, scheme)
    assert result.player_values[0] == pytest.approx(0.0, abs=1e-12)
    assert result.values[1, 0] == pytest.approx(result.values[2, 0])


class AffineScore(PredictorHandle):
    """f(x) = 0.5 + w . x on the flattened window."""

    kind = PredictorKind.LOGISTIC

    def __init__(self, weights, input_shape):
        super().__init__(id="affine", input_shape=input_shape,
                         feature_names=[f"x{i}" for i in range(input_shape[0])], metadata={})
        self.weights = np.asarray(weights, dtype=np.float64)

    def predict_flat(self, X):
        return 0.5 + X @ self.weights

    def to_artifact(self):
        raise NotImplementedError


def test_exact_shapley_on_a_linear_model_has_closed_form():
    rng = np.random.default_rng(21)
    w = rng.normal(scale=0.05, size=6)
    model = AffineScore(w, (6, 1))
    scheme = build_player_scheme(make_schema([f"x{i}" for i in range(6)], 1))
    x = rng.normal(size=(6, 1))
    b = rng.normal(size=(6, 1))
    sample = WindowedSample(values=x, label=1, sample_id=1)
    result = exact_shapley(model, sample, BackgroundSet(values=b[None], seed=0), scheme)
    assert np.allclose(result.player_values, w * (x[:, 0] - b[:, 0]), atol=1e-9, rtol=0)
    assert result.base_value == pytest.approx(0.5 + w @ b[:, 0], abs=1e-12)


def test_lime_on_a_constant_predictor_is_all_zero():
    model = LogisticPredictor.from_weights(np.zeros(4), intercept=0.8472978603872037, input_shape=(4, 1))
    scheme = build_player_scheme(make_schema([f"x{i}" for i in range(4)], 1))
    sample = WindowedSample(values=np.arange(4.0).reshape(4, 1), label=1, sample_id=1)
    background = BackgroundSet(values=np.zeros((2, 4, 1)), seed=0)
    result = lime_explain(model, sample, scheme, background, seed=0)
    assert np.max(np.abs(result.player_values)) <= 1e-9
    assert result.base_value == pytest.approx(0.7, abs=1e-9)


def separable_split(n, seed, duplicate=False):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, 2, 1))
    if duplicate:
        values[:, 1] = values[:, 0]
    labels = (values[:, 0, 0] > 0).astype(np.int64)
    return SampleSet(sample_ids=np.arange(n), values=values, labels=labels, event_dates=(None,) * n)


def test_permuting_a_perfect_stump_costs_half_the_accuracy():
    split = separable_split(1000, seed=2)
    model = GradientBoostingPredictor(
        [Tree.stump(0, 0.0, -5.0, 5.0)], 0.0, TreeEnsembleConfig.boosting(learning_rate=1.0, num_trees=1),
        id="stump", input_shape=(2, 1), feature_names=["signal", "noise"], metadata={},
    )
    result = permutation_importance(model, split, repeats=10, seed=0)
    scores = {s.feature: s.score for s in result.scores}
    assert result.baseline_accuracy == 1.0
    assert scores["signal"] == pytest.approx(result.baseline_accuracy - 0.5, abs=0.03)


def test_duplicated_feature_splits_its_importance():
    unique = separable_split(800, seed=4)
    doubled = separable_split(800, seed=4, duplicate=True)
    unique_model = train_logistic(unique.take(range(400)), epochs=300, feature_names=["signal", "noise"])
    doubled_model = train_logistic(doubled.take(range(400)), epochs=300, feature_names=["signal", "copy"])
    held_out = range(400, 800)
    alone = permutation_importance(unique_model, unique.take(held_out), repeats=10, seed=0).scores[0].score
    shared = permutation_importance(doubled_model, doubled.take(held_out), repeats=10, seed=0).scores
    assert alone > 0.3
    assert shared[0].score < alone and shared[1].score < alone
