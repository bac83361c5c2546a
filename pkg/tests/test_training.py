import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hetfuse import autograd as ag
from hetfuse.config import ConfigError, RunConfig, load_config
from hetfuse.model import init_params
from hetfuse.synth import SynthSpec, synthesize
from hetfuse.training import (SGD, NumericalError, evaluate_cv, fit_normalizer, format_table, loss, make_folds,
                              metrics, normalize, prepare, scheduled_lr, train, window_starts)

from helpers import TOY_WINDOW_CONFIG, toy_dataset


# ---------------------------------------------------------------- loss


def test_loss_hand_example():
    total, parts = loss(ag.const([[1.0, 3.0]]), np.array([[0.0, 2.0]]), None, None, 0.1, 0.1)
    assert parts.pred == 1.0 and total.item() == 1.0


def test_perfect_prediction_and_zero_weights():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    w = ag.param(np.ones((2, 2)))
    total, parts = loss(ag.const(y), y, ag.const([[5.0]]), [w], 0.0, 0.0)
    assert parts.pred == 0.0 and total.item() == 0.0


def test_total_is_recomputable_from_parts():
    rng = np.random.default_rng(0)
    w = ag.param(rng.normal(size=(3, 3)))
    yhat = ag.param(rng.normal(size=(2, 3)))
    total, parts = loss(yhat, rng.normal(size=(2, 3)), [ag.const([[2.0]]), ag.const([[4.0]])], [w], 0.1, 5e-4)
    assert parts.spec == 3.0
    assert parts.reg == pytest.approx(float(np.sum(w.data ** 2)), rel=1e-14)
    assert total.item() == pytest.approx(parts.pred + 0.1 * parts.spec + 5e-4 * parts.reg, rel=1e-14)
    assert parts.total == pytest.approx(total.item(), rel=1e-14)


def test_loss_shape_mismatch():
    with pytest.raises(ag.ShapeError):
        loss(ag.const(np.zeros((2, 2))), np.zeros((2, 3)), None, None, 0.1, 0.0)


def test_l2_covers_weight_matrices_only():
    params = init_params(RunConfig(d=4), case_dim=2)
    names = {n.rsplit(".", 1)[-1] for n, v in params.named() if any(v is w for w in params.weights())}
    assert names and all(n.startswith("W") for n in names)


# ------------------------------------------------------- normalization


def test_log1p_examples():
    x, rec = normalize(np.array([0.0, math.e - 1]), "log1p")
    assert x[0] == 0.0
    assert abs(x[1] - float(mpmath.log(mpmath.e))) < 1e-15


@pytest.mark.parametrize("scheme", ["log1p", "log_minmax", "minmax", "zscore"])
@settings(max_examples=30, deadline=None)
@given(data=st.lists(st.floats(0, 1e4), min_size=2, max_size=30))
def test_normalization_round_trip(scheme, data):
    x = np.array(data)
    assume(np.ptp(x) > 1e-6)
    z, rec = normalize(x, scheme)
    np.testing.assert_allclose(rec.inverse(z), x, rtol=1e-9, atol=1e-9)


def test_normalization_errors():
    with pytest.raises(ValueError, match="std = 0"):
        fit_normalizer(np.ones(4), "zscore")
    with pytest.raises(ValueError, match="constant"):
        fit_normalizer(np.ones(4), "minmax")
    with pytest.raises(ValueError, match="non-positive"):
        fit_normalizer(np.array([-2.0, 1.0]), "log1p")
    with pytest.raises(ValueError):
        fit_normalizer(np.ones(4), "quantile")


# ------------------------------------------------------------- metrics


def test_perfect_and_anticorrelated_predictions():
    y = np.array([[0.0, 2.0, 5.0, 0.0], [1.0, 0.0, 3.0, 4.0]])
    m = metrics(y, y)
    assert (m.rmse, m.mae, m.pcc, m.f1) == (0.0, 0.0, 1.0, 1.0)
    assert metrics(-y, y).pcc == -1.0


def test_all_negative_predictions_give_zero_f1():
    y = np.array([[0.0, 3.0, 1.0]])
    assert metrics(np.zeros((1, 3)), y).f1 == 0.0


FIXTURES = [
    # (yhat, y, rmse, mae, pcc, f1, pcc_excluded, f1_excluded)
    ([[0, 2, 2, 5]], [[0, 1, 2, 3]], 1.118033988749895, 0.75, 0.9393364366277243, 1.0, 0, 0),
    ([[2, 0, 1], [1, 0, 0]], [[1, 0, 3], [0, 0, 0]], 0.9341723589627157, 2 / 3, 0.32732683535398854, 0.5, 1, 0),
    ([[1.5, 3, 7, 0]], [[0.5, 4, 10, 2]], 1.9364916731037085, 1.75, 0.9374769137038613, 2 / 3, 0, 0),
]


@pytest.mark.parametrize("fixture", FIXTURES)
def test_metrics_on_hand_computed_fixtures(fixture):
    yhat, y, rmse, mae, pcc, f1, pex, fex = fixture
    m = metrics(np.array(yhat, float), np.array(y, float), outbreak_threshold=1.0)
    for got, want in ((m.rmse, rmse), (m.mae, mae), (m.pcc, pcc), (m.f1, f1)):
        assert abs(got - want) < 1e-12
    assert (m.pcc_excluded, m.f1_excluded) == (pex, fex)


def test_undefined_steps_are_excluded_and_counted():
    m = metrics(np.zeros((2, 3)), np.zeros((2, 3)))
    assert math.isnan(m.pcc) and math.isnan(m.f1)
    assert m.pcc_excluded == 2 and m.f1_excluded == 2


# ------------------------------------------------------------ training


@pytest.fixture(scope="module")
def toy_prep():
    return prepare(toy_dataset(), TOY_WINDOW_CONFIG)


def test_zero_epochs_return_initial_parameters(toy_prep):
    cfg = TOY_WINDOW_CONFIG.replace(epochs=0)
    start = init_params(cfg, toy_prep.case_dim)
    before = start.arrays()
    result = train(toy_prep, cfg, params=start)
    assert result.history == []
    for name, arr in result.params.arrays().items():
        assert np.array_equal(arr, before[name])


def test_training_history_is_deterministic_and_finite(toy_prep):
    cfg = TOY_WINDOW_CONFIG.replace(epochs=2, lr=1e-3, dropout=0.3, batch_size=2)
    a = train(toy_prep, cfg).history
    b = train(toy_prep, cfg).history
    assert a == b and len(a) == 2
    assert all(math.isfinite(r["total"]) for r in a)
    assert set(a[0]) == {"epoch", "steps", "pred", "spec", "reg", "total"}


def test_max_steps_stops_training(toy_prep):
    hist = train(toy_prep, TOY_WINDOW_CONFIG.replace(epochs=5, max_steps=3)).history
    assert hist[-1]["steps"] == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_location(toy_prep):
    params = init_params(TOY_WINDOW_CONFIG, toy_prep.case_dim)
    params.forecaster.W_out = ag.param(np.full(params.forecaster.W_out.shape, 1e300))
    with pytest.raises(NumericalError, match="epoch 0 step 0"):
        train(toy_prep, TOY_WINDOW_CONFIG.replace(epochs=1), params=params)


def test_sgd_momentum_and_clipping():
    w = ag.param([[3.0, 4.0]])
    opt = SGD([w], lr=0.1, momentum=0.5, clip_norm=1.0)
    w.grad = np.array([[3.0, 4.0]])
    assert opt.grad_norm() == 5.0
    opt.step()
    np.testing.assert_allclose(w.data, [[3.0 - 0.06, 4.0 - 0.08]])
    w.grad = np.array([[0.3, 0.4]])
    opt.step()
    np.testing.assert_allclose(w.data, [[2.94 - 0.1 * (0.3 + 0.5 * 0.6), 3.92 - 0.1 * (0.4 + 0.5 * 0.8)]])


def test_cosine_schedule_decays_to_zero():
    cfg = RunConfig(lr=0.1, lr_schedule="cosine")
    assert scheduled_lr(cfg, 0, 10) == 0.1
    assert scheduled_lr(cfg, 10, 10) == pytest.approx(0.0, abs=1e-18)
    assert scheduled_lr(RunConfig(lr=0.1), 7, 10) == 0.1


# ------------------------------------------------------ cross-validation


def test_five_blocked_folds_with_disjoint_test_windows():
    cfg = RunConfig(T=4, H=4)
    folds = make_folds(45, cfg)
    assert len(folds) == 5
    covered = []
    for f in folds:
        lo, hi = f.test_weeks
        for s in f.test_starts:
            assert lo <= s and s + 8 <= hi
            covered.append(s)
        for s in f.train_starts:
            assert s + 8 <= lo or s >= hi
    assert len(covered) == len(set(covered))
    bounds = [f.test_weeks for f in folds]
    assert bounds[0][0] == 0 and bounds[-1][1] == 45
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))


def test_folds_require_enough_weeks():
    with pytest.raises(ValueError, match="T\\+H"):
        make_folds(30, RunConfig(T=4, H=4))


def test_window_starts():
    assert window_starts(10, 4, 4) == [0, 1, 2]
    assert window_starts(20, 2, 2, lo=5, hi=10) == [5, 6]


def test_oracle_predictor_scores_zero_on_every_fold():
    ds = synthesize(SynthSpec(n_locations=4, weeks=45, seed=1))
    cfg = RunConfig(T=4, H=4, folds=5)

    def oracle(prep, fold, config):
        return {s: prep.counts[s + config.T:s + config.T + config.H] for s in fold.test_starts}

    report = evaluate_cv(ds, cfg, fit_predict=oracle)
    assert len(report.folds) == 5
    assert all(r.rmse == 0.0 and r.mae == 0.0 for r in report.folds)
    assert report.summary()["rmse"] == (0.0, 0.0)


def test_table_format():
    table = format_table({"model": {"rmse": (1.0, 0.5), "mae": (2.0, 0.0), "pcc": (0.5, 0.1), "f1": (0.25, 0.05)}})
    assert table.splitlines()[0] == "| variant | RMSE | MAE | PCC | F1 |"
    assert "| model | 1.0000±0.5000 | 2.0000±0.0000 | 0.5000±0.1000 | 0.2500±0.0500 |" in table


# --------------------------------------------------------------- config


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nT = 6\nlambda1 = 0.5\nuse_spec = false\nsigma_g = none\n")
    cfg = load_config(path, H="2")
    assert (cfg.T, cfg.H, cfg.lambda1, cfg.use_spec, cfg.sigma_g) == (6, 2, 0.5, False, None)
    assert cfg.effective_lambda1 == 0.0


def test_config_rejects_bad_blend_and_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(lambda_o=0.8, lambda_p=0.5)
    path = tmp_path / "bad.cfg"
    path.write_text("not_a_field = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
