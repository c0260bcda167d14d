"""End-to-end checks: exact identities, oracle equivalences, and scaled
behavioural benchmarks that exercise the whole toolkit together.

Each test carries a wall-clock budget (asserted at the end) so a
performance regression in the numerics shows up here, not in CI timeouts.
The heavyweight benchmarks run on seeded synthetic pools sized to finish
comfortably inside those budgets on a laptop-class machine.
"""

import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from flowuq import (
    AlConfig,
    BayesianMlpClassifier,
    GaussianFeatureDensity,
    MlpClassifier,
    Standardizer,
    SynthClass,
    SynthConfig,
    accuracy_rejection,
    calibration,
    classification_metrics,
    decompose,
    kl_diag_gaussian,
    make_kind,
    roc,
    run_loop,
    synth_generate,
)
from flowuq.bnn import elbo_loss_and_grads
from flowuq.data import load_flow_csv, make_blob_config, partition_scenario
from flowuq.experiment import NAMED_SCENARIOS
from flowuq.mlp import Arch, init_params, loss_and_grads

# ---------------------------------------------------------------------------
# shared numeric helpers


def _numeric_grad(fn, arr, h=1e-5):
    """Central finite differences of ``fn`` w.r.t. ``arr``, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = fn()
        flat[i] = keep - h
        lo = fn()
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * h)
    return grad


def _assert_grads_close(analytic, numeric, label):
    """Relative error < 1e-4, with an absolute floor for dead coordinates."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    err = np.abs(a - b)
    tol = 1e-9 + 1e-4 * np.maximum(np.abs(a), np.abs(b))
    worst = float((err - tol).max())
    assert np.all(err <= tol), f"{label}: worst excess {worst:.3e}"


def _auroc_pair_oracle(scores_id, scores_ood) -> float:
    """Mann-Whitney by exhaustive pair counting, in exact rational arithmetic."""
    wins = Fraction(0)
    for o in scores_ood:
        for i in scores_id:
            if o > i:
                wins += 1
            elif o == i:
                wins += Fraction(1, 2)
    return float(wins / (len(scores_ood) * len(scores_id)))


# ---------------------------------------------------------------------------
# entropy decomposition


def test_decomposition_identity_and_jensen_nonnegativity():
    start = time.perf_counter()
    rng = np.random.default_rng(20817)
    for _ in range(10_000):
        k = int(rng.integers(2, 11))
        m = int(rng.integers(1, 33))
        alpha = rng.uniform(0.2, 3.0)
        members = rng.dirichlet(np.full(k, alpha), size=m)
        report = decompose(members)
        # Epistemic is defined as the difference, so this identity is exact;
        # re-adding the parts reproduces the total to the last bit or one ulp.
        assert report.epistemic == report.total - report.aleatoric
        assert abs((report.aleatoric + report.epistemic) - report.total) <= np.spacing(
            max(report.total, 1.0)
        )
        assert report.epistemic >= -1e-9
        assert -1e-9 <= report.aleatoric <= report.total + 1e-9
        assert report.total <= math.log(k) + 1e-9

    ln2 = math.log(2.0)
    disagree = decompose([[1.0, 0.0], [0.0, 1.0]])
    assert disagree.total == pytest.approx(ln2, abs=1e-9)
    assert disagree.aleatoric == pytest.approx(0.0, abs=1e-9)
    assert disagree.epistemic == pytest.approx(ln2, abs=1e-9)

    ambiguous = decompose([[0.5, 0.5], [0.5, 0.5]])
    assert ambiguous.total == pytest.approx(ln2, abs=1e-9)
    assert ambiguous.aleatoric == pytest.approx(ln2, abs=1e-9)
    assert ambiguous.epistemic == pytest.approx(0.0, abs=1e-9)

    mixed = decompose([[0.9, 0.1], [0.1, 0.9]])
    hand_aleatoric = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    assert mixed.total == pytest.approx(ln2, abs=1e-9)
    assert mixed.aleatoric == pytest.approx(hand_aleatoric, abs=1e-9)
    assert mixed.epistemic == pytest.approx(ln2 - hand_aleatoric, abs=1e-9)

    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# ROC / AUROC20*


def test_roc_matches_pair_counting_and_random_baselines():
    start = time.perf_counter()
    rng = np.random.default_rng(31337)
    for _ in range(200):
        n_id = int(rng.integers(3, 41))
        n_ood = int(rng.integers(3, 41))
        if rng.random() < 0.5:
            # integer-valued scores force heavy ties across both sets
            scores_id = rng.integers(0, 6, size=n_id).astype(np.float64)
            scores_ood = rng.integers(0, 6, size=n_ood).astype(np.float64)
        else:
            scores_id = np.round(rng.normal(size=n_id), 1)
            scores_ood = np.round(rng.normal(0.5, 1.0, size=n_ood), 1)
        curve = roc(scores_id, scores_ood)
        assert abs(curve.auroc - _auroc_pair_oracle(scores_id, scores_ood)) <= 1e-12

    # fully tied scores: the curve is the diagonal, and both areas land on
    # the uninformative-baseline values exactly
    flat = roc(np.full(37, 2.5), np.full(23, 2.5))
    assert flat.auroc == 0.5
    assert flat.auroc20 == 0.1

    big_id = rng.normal(size=100_000)
    big_ood = rng.normal(size=100_000)
    assert abs(roc(big_id, big_ood).auroc20 - 0.1) <= 0.02

    assert time.perf_counter() - start < 10.0


# ---------------------------------------------------------------------------
# calibration


def test_calibration_matches_manual_binning_oracle():
    start = time.perf_counter()
    # 20 predictions spanning three confidence bins; every confidence is an
    # exact binary fraction so the spreadsheet arithmetic below is exact too
    confidences = np.array(
        [0.53125, 0.53125, 0.53125, 0.546875, 0.515625]  # bin (0.5, 0.6]
        + [0.796875, 0.703125] * 5  # bin (0.7, 0.8]
        + [0.9375, 0.90625, 0.96875, 0.9375, 0.9375]  # bin (0.9, 1.0]
    )
    correct = np.array([True] * 5 + [True] * 5 + [False] * 5 + [True] * 5)
    probs = np.column_stack([confidences, 1.0 - confidences])
    truth = np.where(correct, 0, 1)

    report = calibration(probs, truth, n_bins=10)
    assert int((report.bin_count > 0).sum()) == 3
    assert report.bin_count.sum() == 20

    # manual oracle: rational arithmetic over left-open equal-width bins
    bins = {}
    for conf, ok in zip(confidences, correct):
        c = Fraction(conf)
        idx = 1 if c == 0 else math.ceil(c * 10)
        count, conf_sum, correct_sum = bins.get(idx, (0, Fraction(0), 0))
        bins[idx] = (count + 1, conf_sum + c, correct_sum + int(ok))
    ece = Fraction(0)
    gaps = []
    for count, conf_sum, correct_sum in bins.values():
        gap = abs(Fraction(correct_sum, count) - conf_sum / count)
        ece += Fraction(count, 20) * gap
        gaps.append(gap)
    assert report.ece == float(ece)
    assert report.mce == float(max(gaps))

    sure = np.column_stack([np.ones(8), np.zeros(8)])
    confident = calibration(sure, np.zeros(8, dtype=int), n_bins=10)
    assert confident.ece == 0.0
    assert confident.mce == 0.0

    assert time.perf_counter() - start < 1.0


# ---------------------------------------------------------------------------
# gradients


def test_training_objectives_match_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(4111)

    arch = Arch((5, 6, 6, 3), batch_norm=True, residual=True)
    params = init_params(arch, rng)
    X = rng.standard_normal((12, 5))
    y = rng.integers(0, 3, size=12)
    decay = 0.07
    _, grads, _ = loss_and_grads(params, X, y, arch, decay)
    for key, value in params.items():
        numeric = _numeric_grad(lambda: loss_and_grads(params, X, y, arch, decay)[0], value)
        _assert_grads_close(grads[key], numeric, f"mlp {key}")

    barch = Arch((4, 5, 3), batch_norm=False)
    mu, rho, eps = {}, {}, {}
    for layer, (fan_in, fan_out) in enumerate(barch.weight_shapes()):
        mu[f"W{layer}"] = 0.3 * rng.standard_normal((fan_in, fan_out))
        mu[f"b{layer}"] = 0.3 * rng.standard_normal(fan_out)
        rho[f"W{layer}"] = rng.uniform(-2.5, -1.0, size=(fan_in, fan_out))
        rho[f"b{layer}"] = rng.uniform(-2.5, -1.0, size=fan_out)
        eps[f"W{layer}"] = rng.standard_normal((fan_in, fan_out))
        eps[f"b{layer}"] = rng.standard_normal(fan_out)
    Xb = rng.standard_normal((10, 4))
    yb = rng.integers(0, 3, size=10)

    def objective():
        return elbo_loss_and_grads(mu, rho, eps, Xb, yb, barch, 5.0, 0.37)[0]

    _, grad_mu, grad_rho = elbo_loss_and_grads(mu, rho, eps, Xb, yb, barch, 5.0, 0.37)
    for key in mu:
        _assert_grads_close(grad_mu[key], _numeric_grad(objective, mu[key]), f"mu {key}")
        _assert_grads_close(grad_rho[key], _numeric_grad(objective, rho[key]), f"rho {key}")

    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------------------
# KL closed form


def test_kl_closed_form_matches_quadrature():
    start = time.perf_counter()
    rng = np.random.default_rng(555)
    for _ in range(50):
        mu = float(rng.uniform(-3.0, 3.0))
        sigma = float(rng.uniform(0.05, 3.0))
        prior_var = float(rng.uniform(0.3, 8.0))
        closed = kl_diag_gaussian(np.array([mu]), np.array([sigma]), prior_var)

        def integrand(w):
            log_q = -0.5 * ((w - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
            log_p = -0.5 * w * w / prior_var - 0.5 * math.log(2 * math.pi * prior_var)
            return math.exp(log_q) * (log_q - log_p)

        numeric, _ = quad(integrand, mu - 14 * sigma, mu + 14 * sigma, limit=300)
        assert abs(closed - numeric) <= 1e-6

    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------------------
# feature density


def test_feature_density_matches_direct_summation_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(909)
    for _ in range(100):
        d = int(rng.integers(2, 7))
        n_classes = int(rng.integers(1, 5))
        blocks, labels = [], []
        for c in range(n_classes):
            # enough samples per class, and a well-conditioned mixing matrix,
            # keep the plain inv/det arithmetic below accurate to ~1e-12
            count = int(rng.integers(d + 5, 41))
            center = rng.uniform(-4.0, 4.0, size=d)
            mix = 0.3 * rng.standard_normal((d, d)) + np.diag(rng.uniform(0.8, 1.6, d))
            z = center + rng.standard_normal((count, d)) @ mix
            blocks.append(z)
            labels.append(np.full(count, c))
        Z = np.vstack(blocks)
        y = np.concatenate(labels)
        model = GaussianFeatureDensity().fit(Z, y)

        queries = model.means_ + 0.3 * rng.standard_normal(model.means_.shape)
        got = model.score_samples(queries)
        priors = np.exp(model.log_priors_)
        for row, z in enumerate(queries):
            density = 0.0
            for i in range(len(model.class_ids_)):
                cov = model.covariances_[i] + model.jitter_ * np.eye(d)
                diff = z - model.means_[i]
                maha = float(diff @ np.linalg.inv(cov) @ diff)
                norm = math.sqrt((2 * math.pi) ** d * np.linalg.det(cov))
                density += priors[i] * math.exp(-0.5 * maha) / norm
            assert abs(got[row] - math.log(density)) <= 1e-9

    assert time.perf_counter() - start < 30.0


def test_distance_aware_training_keeps_spectral_norms_bounded():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    centers = rng.uniform(-4.0, 4.0, size=(4, 4))
    X = np.vstack([c + rng.standard_normal((150, 4)) for c in centers])
    y = np.repeat(np.arange(4), 150)
    model = MlpClassifier(ddu_mode=True, epochs=3, seed=5).fit(X, y)
    for layer in range(model.arch_.n_hidden + 1):
        top = float(np.linalg.svd(model.params_[f"W{layer}"], compute_uv=False)[0])
        assert top <= 1.0 + 1e-2, f"layer {layer}: spectral norm {top:.4f}"
    assert time.perf_counter() - start < 30.0


# ---------------------------------------------------------------------------
# novelty detection on a far cluster


def test_far_cluster_novelty_scores_reach_high_auroc():
    start = time.perf_counter()
    config = make_blob_config(
        n_known=4,
        n_unknown=1,
        samples_per_class=500,
        dim=6,
        known_radius=6.0,
        unknown_distance=20.0,
        seed=11,
    )
    known_centers = np.array([c.center for c in config.classes if not c.unknown])
    unknown_center = np.array(next(c.center for c in config.classes if c.unknown))
    scale = max(c.scale for c in config.classes)
    gaps = np.linalg.norm(known_centers - unknown_center, axis=1)
    assert np.all(gaps >= 10.0 * scale)

    dataset = synth_generate(config, seed=11)
    bundle = partition_scenario(dataset, config.unknown_names(), seed=11)

    aurocs = {}
    for name in ("nn", "energy", "ddu", "bnn", "rf"):
        kind = make_kind(name)
        if kind.standardize:
            scaler = Standardizer().fit(bundle.train.features)
            x_train = scaler.transform(bundle.train.features)
            x_id = scaler.transform(bundle.test.features)
            x_ood = scaler.transform(bundle.ood.features)
        else:
            x_train = bundle.train.features
            x_id, x_ood = bundle.test.features, bundle.ood.features
        model = kind.build(seed=3, n_classes=4)
        model.fit(x_train, bundle.train.labels)
        scores_id = kind.ood_scores(model, x_id, seed=1234)
        scores_ood = kind.ood_scores(model, x_ood, seed=1234)
        aurocs[name] = roc(scores_id, scores_ood).auroc

    print("novelty AUROC by model kind:")
    for name, value in aurocs.items():
        print(f"  {name:7s} {value:.4f}")
    for name in ("bnn", "rf", "ddu"):
        assert aurocs[name] >= 0.90, f"{name}: AUROC {aurocs[name]:.4f}"
    for name in ("nn", "energy"):
        assert 0.0 <= aurocs[name] <= 1.0

    assert time.perf_counter() - start < 180.0


# ---------------------------------------------------------------------------
# acquisition benchmark


_POOL_COUNTS = (14000, 8000, 6000, 5000, 4000, 3500, 3000, 2500, 2000, 2000)
_POOL_DIM = 16
_POOL_RADIUS = 8.0


def _acquisition_benchmark_data():
    """50k-point imbalanced 10-class pool plus a balanced held-out test set."""
    rng = np.random.default_rng(77)
    dirs = rng.normal(size=(10, _POOL_DIM))
    centers = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * _POOL_RADIUS
    pool_cfg = SynthConfig(
        classes=tuple(
            SynthClass(f"c{i}", _POOL_COUNTS[i], tuple(centers[i])) for i in range(10)
        ),
        dim=_POOL_DIM,
    )
    test_cfg = SynthConfig(
        classes=tuple(SynthClass(f"c{i}", 500, tuple(centers[i])) for i in range(10)),
        dim=_POOL_DIM,
    )
    return synth_generate(pool_cfg, seed=101), synth_generate(test_cfg, seed=202)


def _full_pool_f1(kind, pool, test) -> float:
    if kind.standardize:
        scaler = Standardizer().fit(pool.features)
        x_train = scaler.transform(pool.features)
        x_test = scaler.transform(test.features)
    else:
        x_train, x_test = pool.features, test.features
    model = kind.build(seed=0, n_classes=10)
    model.fit(x_train, pool.labels)
    predicted = model.predict(x_test)
    return classification_metrics(predicted, test.labels, n_classes=10).f1_macro


def test_uncertainty_acquisition_outpaces_random_for_bnn_not_rf():
    start = time.perf_counter()
    pool, test = _acquisition_benchmark_data()
    assert pool.n_samples == 50_000

    outcomes = {}
    for name, params in (("bnn", {"epochs": 20}), ("rf", None)):
        kind = make_kind(name, params)
        target = 0.95 * _full_pool_f1(kind, pool, test)
        pairs = []
        for seed in range(5):
            reached = {}
            for strategy in ("bald", "random"):
                config = AlConfig(
                    initial_size=500,
                    acquisition_size=500,
                    strategy=strategy,
                    max_rounds=8,
                    target_f1=target,
                    seed=seed,
                )
                trace = run_loop(kind, pool, test, config)
                reached[strategy] = trace.samples_to_reach(target)
            pairs.append(reached)
        outcomes[name] = (target, pairs)

    print("labelled samples needed to reach 95% of full-pool macro F1:")
    for name, (target, pairs) in outcomes.items():
        print(f"  {name} (target {target:.4f}):")
        for seed, reached in enumerate(pairs):
            print(f"    seed {seed}: bald {reached['bald']}  random {reached['random']}")

    horizon = pool.n_samples + 1  # an unreached target costs more than any run
    bnn_wins = sum(
        (r["bald"] or horizon) < (r["random"] or horizon) for r in outcomes["bnn"][1]
    )
    assert bnn_wins >= 4, f"uncertainty acquisition won only {bnn_wins}/5 pairs"

    rf_close = sum(
        abs((r["bald"] or horizon) - (r["random"] or horizon)) <= 500
        for r in outcomes["rf"][1]
    )
    assert rf_close >= 4, f"forest strategies differed by more than one batch in {5 - rf_close}/5 pairs"

    assert time.perf_counter() - start < 600.0


# ---------------------------------------------------------------------------
# rejection curves


def test_rejection_improves_accuracy_on_retained_samples():
    start = time.perf_counter()

    rng = np.random.default_rng(21)
    truth = rng.integers(0, 3, size=40)
    predicted = truth.copy()
    wrong = rng.choice(40, size=12, replace=False)
    predicted[wrong] = (truth[wrong] + 1) % 3
    uncertainty = np.where(predicted == truth, 0.0, 1.0)
    curve = accuracy_rejection(uncertainty, predicted, truth)
    assert np.all(np.diff(curve.accuracy) >= -1e-12)
    assert curve.accuracy[-1] == 1.0
    assert 1.0 in curve.accuracy

    centers = np.zeros((2, 4))
    centers[0, 0], centers[1, 0] = -1.0, 1.0  # strongly overlapping blobs
    config = SynthConfig(
        classes=tuple(
            SynthClass(f"c{i}", 600, tuple(centers[i])) for i in range(2)
        ),
        dim=4,
    )
    train = synth_generate(config, seed=345)
    test = synth_generate(
        SynthConfig(
            classes=tuple(
                SynthClass(f"c{i}", 400, tuple(centers[i])) for i in range(2)
            ),
            dim=4,
        ),
        seed=346,
    )
    scaler = Standardizer().fit(train.features)
    model = BayesianMlpClassifier(seed=9).fit(
        scaler.transform(train.features), train.labels
    )
    x_test = scaler.transform(test.features)
    members = model.sample_proba(x_test)
    total = decompose(members).total
    predicted = model.predict(x_test)
    curve = accuracy_rejection(total, predicted, test.labels)
    at_zero = curve.accuracy_at(0.0)
    at_half = curve.accuracy_at(0.5)
    print(f"accuracy at 0% rejection {at_zero:.4f}, at 50% rejection {at_half:.4f}")
    assert at_half >= at_zero

    assert time.perf_counter() - start < 120.0


# ---------------------------------------------------------------------------
# real flow export (only when the caller provides one)


@pytest.mark.skipif(
    "FLOWUQ_NF_TONIOT_CSV" not in os.environ,
    reason="set FLOWUQ_NF_TONIOT_CSV to a NetFlow ToN-IoT v2 export to run",
)
def test_real_netflow_closed_set_accuracy_and_novelty():
    start = time.perf_counter()
    dataset, _ = load_flow_csv(os.environ["FLOWUQ_NF_TONIOT_CSV"])

    # stratified 5% subsample so the run stays desk-sized
    rng = np.random.default_rng(4242)
    picked = []
    for class_id in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == class_id)
        take = max(2, int(round(0.05 * members.size)))
        picked.append(rng.choice(members, size=min(take, members.size), replace=False))
    subsample = dataset.select(np.sort(np.concatenate(picked)))

    bundle = partition_scenario(subsample, NAMED_SCENARIOS["3u"], seed=0)
    kind = make_kind("rf")
    model = kind.build(seed=0, n_classes=len(bundle.known_classes))
    model.fit(bundle.train.features, bundle.train.labels)

    predicted = model.predict(bundle.test.features)
    metrics = classification_metrics(
        predicted, bundle.test.labels, n_classes=len(bundle.known_classes)
    )
    scores_id = kind.ood_scores(model, bundle.test.features)
    scores_ood = kind.ood_scores(model, bundle.ood.features)
    curve = roc(scores_id, scores_ood)
    print(f"closed-set accuracy {metrics.accuracy:.4f}, AUROC20* {curve.auroc20:.4f}")
    assert metrics.accuracy >= 0.95
    assert curve.auroc20 >= 0.6

    assert time.perf_counter() - start < 1800.0
