"""Acceptance criteria, one test each, each printing a PASS/FAIL line."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from conftest import quick_config_text
from oracles import central_difference, constant_decel_depth, decel_record_g
from pffpclass.bnn import draw_noise, elbo_loss, forward_sample, init_network
from pffpclass.cli import main
from pffpclass.config import default_config
from pffpclass.corpus import FeatureTable, SplitSpec, adasyn, split
from pffpclass.evaluation import evaluate
from pffpclass.fusion import FusionConfig, fuse, predict_with_uncertainty, quartiles, temper_prior
from pffpclass.pipeline import held_out_test, train_pipeline
from pffpclass.signal import RawRecord, integrate_profile
from pffpclass.synthetic import make_corpus, to_table, write_corpus

CORPUS_ENV = "PFFP_CORPUS_DIR"


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return report


def test_c01_fusion_arithmetic(verdict):
    out = temper_prior([0.8, 0.2, 0.0, 0.0])
    err = float(np.max(np.abs(out - [0.58, 0.22, 0.10, 0.10])))
    verdict(1, "tempered prior", err <= 1e-12, f"{np.round(out, 12).tolist()} max error {err:.1e} (tol 1e-12)")


def test_c02_kinematics_oracle(verdict):
    t, a = decel_record_g(lambda _: 25.0, 0.3, 0.0005)
    depth = integrate_profile(RawRecord(t, a), 0, 5.0).penetration_depth
    rel = abs(depth - 0.5) / 0.5
    assert constant_decel_depth(5.0, 25.0) == 0.5
    verdict(2, "constant deceleration depth", rel <= 1e-3, f"{depth:.6f} m, relative error {rel:.2e} (tol 1e-3)")


def test_c03_gradient_check(verdict):
    net = init_network(seed=4)
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=(1, 211)), np.array([2])
    kw = dict(kl_weight=1e-3, prior_variance=0.1, eps=draw_noise(net, rng))
    res = elbo_loss(net, x, y, **kw)

    def loss():
        return elbo_loss(net, x, y, **kw).loss

    worst = {}
    for group, grads, params in (("mu", res.grad_mu, net.mu), ("rho", res.grad_rho, net.rho)):
        for key, g in grads.items():
            err = 0.0
            for f in rng.choice(g.size, size=min(g.size, 40), replace=False):
                idx = np.unravel_index(f, g.shape)
                num = central_difference(loss, params[key], idx)
                err = max(err, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
            worst[f"{group}:{key}"] = err
    top = max(worst, key=worst.get)
    verdict(3, "finite-difference gradients", worst[top] < 1e-4,
            f"{len(worst)} tensors, worst {top} relative error {worst[top]:.1e} (tol 1e-4)")


def test_c04_probability_hygiene(verdict):
    rng = np.random.default_rng(0)
    worst_sum, min_comp, n = 0.0, np.inf, 0
    for s in range(100):
        net = init_network(seed=s)
        X = rng.normal(0, rng.uniform(0.1, 30.0), size=(100, 211))
        lik = np.vstack([forward_sample(net, X[i], rng) for i in range(100)])
        priors = rng.dirichlet(np.full(4, 0.3), size=100)
        priors[rng.random((100, 4)) < 0.3] = 0.0
        priors[priors.sum(axis=1) == 0, rng.integers(0, 4)] = 1.0
        priors /= priors.sum(axis=1, keepdims=True)
        for p, q in zip(priors, lik):
            post = fuse(temper_prior(p), q)
            for v in (q, post):
                worst_sum = max(worst_sum, abs(v.sum() - 1.0))
                min_comp = min(min_comp, v.min())
            n += 1
    ok = n == 10_000 and worst_sum <= 1e-9 and min_comp >= 0.0
    verdict(4, "probability hygiene", ok, f"{n} evaluations, max |sum-1| {worst_sum:.1e}, min component {min_comp:.1e}")


def test_c05_adasyn_properties(verdict):
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 1, (100, 5)), rng.normal(1.5, 1, (12, 5))])
    y = np.repeat([0, 1], [100, 12])
    res = adasyn(X, y, k=5, seed=0, return_parents=True)
    counts = np.bincount(res.y)
    balance = abs(counts[1] - counts[0]) / counts[0]
    synth = res.X[len(y):]
    a, b = X[res.parents[:, 0]], X[res.parents[:, 1]]
    tol = 1e-12
    inside = np.all((synth >= np.minimum(a, b) - tol) & (synth <= np.maximum(a, b) + tol))
    ok = balance <= 0.05 and inside and np.all(y[res.parents] == 1)
    verdict(5, "ADASYN balance and hull", ok,
            f"counts {counts.tolist()} imbalance {balance:.1%} (tol 5%), {len(synth)} synthetic rows inside parent hull: {inside}")


def test_c06_synthetic_end_to_end(verdict):
    table = to_table(make_corpus(400, seed=2024))
    bundle, _ = train_pipeline(table, default_config(), seed=0, threads=os.cpu_count() or 1)
    result = evaluate(bundle, held_out_test(bundle, table), seed=0)
    verdict(6, "synthetic end-to-end", result.accuracy >= 0.95,
            f"held-out accuracy {result.accuracy:.1%} on {result.matrix.total} profiles (need >= 95%)")


def test_c07_published_corpus(verdict, tmp_path, capsys):
    root = os.environ.get(CORPUS_ENV)
    if not root:
        with capsys.disabled():
            print(f"\n[criterion 7] SKIP published corpus: set {CORPUS_ENV} to a directory with manifest.csv and raw/")
        pytest.skip(f"{CORPUS_ENV} not set")
    root = Path(root)
    features = tmp_path / "features.csv"
    assert main(["preprocess", "--raw-dir", str(root / "raw"), "--manifest", str(root / "manifest.csv"),
                 "--out", str(features)]) == 0
    assert main(["train", "--features", str(features), "--out", str(tmp_path / "m.bundle")]) == 0
    assert main(["evaluate", "--model", str(tmp_path / "m.bundle"), "--features", str(features),
                 "--out", str(tmp_path / "rep")]) == 0
    report = json.loads((tmp_path / "rep" / "report.json").read_text())
    verdict(7, "published corpus", report["accuracy"] >= 0.80,
            f"held-out accuracy {report['accuracy_text']} on {report['n']} (need >= 80%; published 91.1%)")


def test_c08_quartile_stabilization(verdict, trained, synthetic_table):
    bundle, _ = trained
    s = bundle.scaler.scale_summary(synthetic_table.summary)
    b = bundle.scaler.scale_bins(synthetic_table.bins)

    def samples(i, n, seed):
        return predict_with_uncertainty(bundle.forest, bundle.network, s[i], b[i],
                                        FusionConfig(iterations=n), np.random.default_rng(seed)).samples

    # the input whose posterior is least certain
    iqr = [np.max(np.subtract(*quartiles(samples(i, 50, 0))[::-2])) for i in range(len(synthetic_table))]
    i = int(np.argmax(iqr))
    ref = np.array(quartiles(samples(i, 200, 10_000)))
    runs = [samples(i, 50, r) for r in range(20)]
    # quartiles of the first n draws trace one growing sample, as with --iterations n
    q = {n: [np.array(quartiles(S[:n])) for S in runs] for n in (10, 30, 50)}
    med = {n: np.median([np.abs(x - ref) for x in q[n]], axis=0) for n in (10, 50)}
    gap = np.median([np.abs(a - c) for a, c in zip(q[30], q[50])], axis=0).max()
    ok = bool(np.all(med[50] <= med[10])) and gap < 0.05
    verdict(8, "quartile stabilization", ok,
            f"input {synthetic_table.ids[i]}: max median |q-q_ref| n=10 {med[10].max():.4f}, "
            f"n=50 {med[50].max():.4f}; max |q30-q50| {gap:.4f} (tol 0.05)")


def test_c09_determinism(verdict, tmp_path):
    manifest = write_corpus(make_corpus(80, seed=31), tmp_path / "corpus")
    features = tmp_path / "features.csv"
    cfg = tmp_path / "quick.cfg"
    cfg.write_text(quick_config_text())
    assert main(["preprocess", "--raw-dir", str(tmp_path / "corpus" / "raw"), "--manifest", str(manifest),
                 "--out", str(features)]) == 0
    for name in ("a", "b"):
        assert main(["train", "--features", str(features), "--config", str(cfg), "--seed", "11",
                     "--out", str(tmp_path / f"{name}.bundle")]) == 0
    same_bundle = (tmp_path / "a.bundle").read_bytes() == (tmp_path / "b.bundle").read_bytes()
    inputs = sorted(str(p) for p in (tmp_path / "corpus" / "raw").glob("*.csv"))[:4]
    for name in ("a", "b"):
        assert main(["predict", "--model", str(tmp_path / "a.bundle"), "--input", *inputs,
                     "--seed", "5", "--out", str(tmp_path / f"{name}.json")]) == 0
    same_report = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    verdict(9, "determinism", same_bundle and same_report,
            f"bundles byte-identical: {same_bundle}, predict reports identical: {same_report}")


def test_c10_split_arithmetic(verdict):
    labels = np.repeat([1, 2, 3, 4], [136, 103, 86, 122])
    table = FeatureTable([f"d{i}" for i in range(447)], np.zeros((447, 2)), np.zeros((447, 211)), labels)
    train, val, test = split(table, SplitSpec(test_fraction=0.15, validation_fraction=0.15, seed=0, stratified=True))
    sizes = (len(test), len(val), len(train))
    present = set(test.labels.tolist()) == {1, 2, 3, 4}
    verdict(10, "split arithmetic", sizes == (67, 57, 323) and present,
            f"test/validation/train {sizes[0]}/{sizes[1]}/{sizes[2]} (need 67/57/323), all classes in test: {present}")
