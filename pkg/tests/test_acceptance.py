"""End-to-end acceptance checks, one test per criterion.

The terminal summary lists a PASS/FAIL line per criterion (see conftest).
The desk-scale model is trained once per session and shared with the lineup
calibration check.
"""

import csv
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from resdiag import diagnostics as dx
from resdiag.cli import main
from resdiag.dataset import build_balanced_dataset, read_manifest
from resdiag.dgp import bucket_bounds, bucket_of, label_distance, sample_spec, simulate_dgp
from resdiag.distance import kl_nonnormal_mc, simulate_residual_matrix
from resdiag.network import DESK_CONFIG, DistanceEstimator, predict, train
from resdiag.network import layers as L
from resdiag.network.serialize import load_weights, save_weights
from resdiag.network.train import dataset_arrays
from resdiag.raster import rasterize, read_pgm, write_pgm
from resdiag.regression import RegressionData, breusch_pagan_test, fit_ols, reset_test

import test_network as tn

pytestmark = pytest.mark.slow

DESK_TOTAL = 2000
DESK_SEED = 2024
HELDOUT_SEED = 7


def elapsed(start):
    return time.perf_counter() - start


@pytest.fixture(scope="session")
def heldout_dir(tmp_path_factory):
    """``dataset --count 500`` output, reused as the held-out set for the desk model."""
    out = tmp_path_factory.mktemp("heldout")
    code = main(["dataset", "--count", "500", "--seed", str(HELDOUT_SEED), "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def desk_model():
    t0 = time.perf_counter()
    examples = build_balanced_dataset(DESK_TOTAL, seed=DESK_SEED)
    build_seconds = elapsed(t0)
    t0 = time.perf_counter()
    params, hist = train(examples, DESK_CONFIG, split_seed=0, rng=np.random.default_rng(0),
                         patience=50, max_epochs=100)
    return DistanceEstimator(params, DESK_CONFIG), hist, build_seconds, elapsed(t0)


@pytest.mark.criterion("Oracle null identity")
def test_oracle_null_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    ds = []
    for _ in range(1000):
        spec = replace(sample_spec(rng), beta2=0, b=0.0, dist_e="normal")
        ds.append(label_distance(simulate_dgp(spec, rng)).d)
    assert all(d == 0.0 for d in ds), f"{sum(d != 0.0 for d in ds)} nonzero distances"
    assert elapsed(t0) < 30


@pytest.mark.criterion("Cross-method agreement")
def test_cross_method_agreement():
    t0 = time.perf_counter()
    rng = np.random.default_rng(200)
    diffs = []
    for k in range(20):
        spec = replace(sample_spec(rng), beta2=0, dist_e="normal", n=100)
        assert spec.b > 0
        scen = simulate_dgp(spec, rng)
        closed = label_distance(scen).d

        def simulate(r, m):
            return scen.mean[:, None] + scen.k_vec[:, None] * r.normal(0.0, spec.sigma_e, (spec.n, m))

        sample = simulate_residual_matrix(simulate, scen.model.operator, 1000, np.random.default_rng([200, k]))
        diffs.append(abs(kl_nonnormal_mc(sample, kde="exact").d - closed))
    diffs = np.array(diffs)
    print(f"cross-method |diff|: median {np.median(diffs):.3f}, max {diffs.max():.3f}")
    assert elapsed(t0) < 300
    assert np.median(diffs) < 0.25 and diffs.max() < 0.5, f"median {np.median(diffs):.3f}, max {diffs.max():.3f}"


@pytest.mark.criterion("Gradient correctness")
def test_gradient_correctness():
    t0 = time.perf_counter()
    errs = {}
    rng = np.random.default_rng(300)

    x = rng.normal(size=(2, 3, 6, 6))
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    G = rng.normal(size=(2, 4, 6, 6))
    f = lambda: float(np.sum(L.conv3x3_forward(x, w, b)[0] * G))
    dx_, dw, db = L.conv3x3_backward(G, L.conv3x3_forward(x, w, b)[1])
    errs["conv"] = max(tn.rel_err(dx_.ravel(), tn.numeric_grad(f, x)),
                       tn.rel_err(dw.ravel(), tn.numeric_grad(f, w)), tn.rel_err(db, tn.numeric_grad(f, b)))

    xb = rng.normal(size=(5, 3, 2, 2)) * 2 + 1
    gam, bet = rng.normal(size=3), rng.normal(size=3)
    Gb = rng.normal(size=xb.shape)
    fb = lambda: float(np.sum(L.batchnorm_forward(xb, gam, bet, np.zeros(3), np.ones(3), True)[0] * Gb))
    dxb, dg, dbt = L.batchnorm_backward(Gb, L.batchnorm_forward(xb, gam, bet, np.zeros(3), np.ones(3), True)[1])
    errs["batchnorm"] = max(tn.rel_err(dxb.ravel(), tn.numeric_grad(fb, xb)),
                            tn.rel_err(dg, tn.numeric_grad(fb, gam)), tn.rel_err(dbt, tn.numeric_grad(fb, bet)))

    xr = tn.away_from_zero(rng, (4, 9))
    Gr = rng.normal(size=xr.shape)
    fr = lambda: float(np.sum(L.relu_forward(xr)[0] * Gr))
    errs["relu"] = tn.rel_err(L.relu_backward(Gr, L.relu_forward(xr)[1]).ravel(), tn.numeric_grad(fr, xr))

    xp = rng.normal(size=(2, 2, 4, 4))
    Gp = rng.normal(size=(2, 2, 2, 2))
    fp = lambda: float(np.sum(L.maxpool2_forward(xp)[0] * Gp))
    errs["maxpool"] = tn.rel_err(L.maxpool2_backward(Gp, L.maxpool2_forward(xp)[1]).ravel(), tn.numeric_grad(fp, xp))

    xg = rng.normal(size=(2, 3, 3, 3))
    Gg = rng.normal(size=(2, 3))
    for name, fwd, bwd in (("global max", L.global_max_forward, L.global_max_backward),
                           ("global average", L.global_avg_forward, L.global_avg_backward)):
        fg = lambda: float(np.sum(fwd(xg)[0] * Gg))
        errs[name] = tn.rel_err(bwd(Gg, fwd(xg)[1]).ravel(), tn.numeric_grad(fg, xg))

    xd, wd, bd = rng.normal(size=(3, 6)), rng.normal(size=(6, 2)), rng.normal(size=2)
    Gd = rng.normal(size=(3, 2))
    fd = lambda: float(np.sum(L.dense_forward(xd, wd, bd)[0] * Gd))
    ddx, ddw, ddb = L.dense_backward(Gd, L.dense_forward(xd, wd, bd)[1])
    errs["dense"] = max(tn.rel_err(ddx.ravel(), tn.numeric_grad(fd, xd)),
                        tn.rel_err(ddw.ravel(), tn.numeric_grad(fd, wd)), tn.rel_err(ddb, tn.numeric_grad(fd, bd)))

    errs["network"] = tn._composed_grad_error(replace(DESK_CONFIG, base_filters=2, dense_units=6), seed=301)
    print("max relative errors: " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    assert max(errs.values()) < 1e-4, errs
    assert elapsed(t0) < 120


@pytest.mark.criterion("Desk-scale training")
def test_desk_training(desk_model, heldout_dir):
    est, hist, build_seconds, train_seconds = desk_model
    held = read_manifest(heldout_dir / "manifest.csv")
    x, aux, y = dataset_arrays(held, est.config)
    pred = predict(est.params, est.config, x, aux)
    rho = spearmanr(pred, y).statistic
    rmse = float(np.sqrt(np.mean((pred - y) ** 2)))
    print(f"desk model: {len(hist.val_rmse)} epochs (best {hist.best_epoch + 1}), dataset {build_seconds:.0f}s, "
          f"training {train_seconds:.0f}s, held-out Spearman {rho:.3f}, RMSE {rmse:.3f}")
    assert len(hist.val_rmse) <= 100
    assert train_seconds <= 1800
    assert rho >= 0.7 and rmse <= 1.3, f"Spearman {rho:.3f}, RMSE {rmse:.3f}"


@pytest.mark.criterion("Lineup size calibration")
def test_lineup_size_calibration(desk_model):
    est = desk_model[0]
    t0 = time.perf_counter()
    rng = np.random.default_rng(500)
    rejections = 0
    for _ in range(200):
        spec = replace(sample_spec(rng), beta2=0, b=0.0, dist_e="normal")
        scen = simulate_dgp(spec, rng)
        result, _ = dx.run_lineup(scen.model, est, rng, lineup_m=20)
        rejections += result.reject_at_95
    # binomial 95% band around a 5% rate over 200 lineups
    lo, hi = 0.024, 0.088
    print(f"null lineup rejection rate {rejections / 200:.3f}, interval [{lo:.3f}, {hi:.3f}]")
    assert elapsed(t0) < 600
    assert lo <= rejections / 200 <= hi


@pytest.mark.criterion("MVI table reproduction")
def test_mvi_table():
    cases = [(5.0, 100, "Strong", 10.39483), (1.0, 200, "Weak", 5.70168), (3.0, 150, "Moderate", 7.98936)]
    for d_hat, n, category, value in cases:
        r = dx.mvi(d_hat, n, 10.0)
        assert r.category == category
        assert r.mvi == pytest.approx(value, abs=1e-5)
    assert dx.mvi_category(8.0) == "Strong" and dx.mvi_category(6.0) == "Moderate"


@pytest.mark.criterion("Distance-vs-n monotonicity")
def test_distance_grows_with_n():
    rng = np.random.default_rng(700)
    for k in range(20):
        base = replace(sample_spec(rng), j=2, beta2=1, dist_e="normal")
        small = label_distance(simulate_dgp(replace(base, n=50), np.random.default_rng([700, k]))).d
        large = label_distance(simulate_dgp(replace(base, n=500), np.random.default_rng([700, k]))).d
        assert large > small, f"design {k}: D(500) = {large:.4f} <= D(50) = {small:.4f}"


@pytest.mark.criterion("Conventional-test size")
def test_conventional_test_size():
    t0 = time.perf_counter()
    rng = np.random.default_rng(800)
    bp = reset = 0
    for _ in range(500):
        x = rng.normal(size=100)
        y = 1 + x + rng.normal(size=100)
        model = fit_ols(RegressionData(np.column_stack([np.ones(100), x]), y))
        bp += breusch_pagan_test(model).p_value < 0.05
        reset += reset_test(model).p_value < 0.05
    print(f"empirical size: Breusch-Pagan {bp / 500:.3f}, RESET {reset / 500:.3f}")
    assert 0.03 <= bp / 500 <= 0.07
    assert 0.03 <= reset / 500 <= 0.07
    assert elapsed(t0) < 120


@pytest.mark.criterion("Balanced dataset exactness")
def test_balanced_dataset_exactness(heldout_dir):
    with open(heldout_dir / "manifest.csv", newline="") as fh:
        targets = [float(row["target_d"]) for row in csv.DictReader(fh)]
    assert len(targets) == 500
    counts = np.zeros(51, dtype=int)
    for d in targets:
        i = min(50, int(np.floor(d * 49 / 7)) + 1)
        lo, hi = bucket_bounds(i)
        lo_ref, hi_ref = 7 * (i - 1) / 49, (7 * i / 49 if i < 50 else np.inf)
        assert (lo, hi) == (lo_ref, hi_ref)
        assert lo_ref <= d < hi_ref and bucket_of(d) == i
        counts[i] += 1
    np.testing.assert_array_equal(counts[1:], 10)


@pytest.mark.criterion("Power-curve offset")
def test_power_curve_offset():
    rng = np.random.default_rng(900)
    for _ in range(50):
        d = rng.uniform(0, 5, 60)
        beta = rng.uniform(0.1, 4)
        y = (rng.uniform(size=60) < 1 / (1 + 19 * np.exp(-beta * d))).astype(float)
        if y.min() == y.max():
            continue
        fit = dx.fit_power_curve(d, y)
        assert abs(float(fit.probability(0.0)) - 0.05) < 1e-12
    for beta in (-50.0, -1.0, 0.0, 0.3, 7.0, 1e3):
        curve = dx.PowerCurveFit(beta, False, True, 0)
        assert abs(float(curve.probability(0.0)) - 0.05) < 1e-12


@pytest.mark.criterion("Serialization")
def test_serialization():
    params = tn._perturbed_params(DESK_CONFIG, 1000).astype(np.float32)
    blob = save_weights(params, DESK_CONFIG)
    back, cfg = load_weights(blob)
    assert cfg == DESK_CONFIG
    for name, tensor in params.tensors().items():
        assert back.tensors()[name].tobytes() == tensor.tobytes(), name
    assert save_weights(back, cfg) == blob

    img = rasterize(*np.random.default_rng(1001).normal(size=(2, 120)))
    assert np.max(np.abs(read_pgm(write_pgm(img)) - img.pixels)) <= 1 / 255
    noise = np.random.default_rng(1002).uniform(size=(32, 32))
    assert np.max(np.abs(read_pgm(write_pgm(noise)) - noise)) <= 1 / 255
