"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line with its headline numbers so the
whole gate can be read from `pytest -s tests/test_acceptance.py`.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from clbgmm.bgmm import BgmmConfig, fit, log_likelihood, log_likelihood_batch
from clbgmm.cli import main
from clbgmm.dataset import (
    ExperimentManifest,
    ModalitySpec,
    SyntheticConfig,
    generate_synthetic,
)
from clbgmm.metrics import (
    AccuracyMatrix,
    average_accuracy,
    average_incremental_accuracy,
    forgetting,
    forgetting_measure,
    relative_evolution,
)
from clbgmm.protocol import multi_seed, oracle_union_accuracy, run_continual

from _oracles import (
    brute_average_accuracy,
    brute_average_incremental_accuracy,
    brute_forgetting,
    brute_forgetting_measure,
    classical_em,
)


def report(name, detail):
    print(f"PASS {name}: {detail}")


def fusion_setup(seeds, spread=1.5, n_basic=5, n_compound=6, max_components=4):
    config = SyntheticConfig(
        n_basic_classes=n_basic, n_compound_classes=n_compound,
        dim_a=2, dim_b=2, samples_per_class_train=30, samples_per_class_test=15,
        cluster_spread=spread, modality_bias=1.0)
    table_a, table_b, tasks = generate_synthetic(config, seed=11)
    tables = {"mod_a": table_a, "mod_b": table_b}

    def manifest(mod_names):
        specs = tuple(
            ModalitySpec(m, "", 2, normalize=(m == "mod_a")) for m in mod_names)
        return ExperimentManifest(
            tasks=tuple(tasks), modalities=specs, fusion_strategy="concat",
            bgmm_config=BgmmConfig(max_components=max_components),
            seeds=tuple(seeds), output_path="out")

    return manifest, tables


def test_criterion_1_metric_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(99)
    checks = 0
    for _ in range(100):
        rows = [[rng.uniform() for _ in range(k)] for k in range(1, 7)]
        m = AccuracyMatrix.from_rows(rows, [f"t{k}" for k in range(1, 7)])
        for k in range(1, 7):
            assert abs(average_accuracy(m, k) - brute_average_accuracy(rows, k)) <= 1e-12
            assert abs(average_incremental_accuracy(m, k)
                       - brute_average_incremental_accuracy(rows, k)) <= 1e-12
            checks += 2
        for k in range(2, 7):
            for j in range(1, k):
                assert abs(forgetting(m, j, k) - brute_forgetting(rows, j, k)) <= 1e-12
                checks += 1
            assert abs(forgetting_measure(m, k) - brute_forgetting_measure(rows, k)) <= 1e-12
            checks += 1
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    report("criterion 1 (metric oracle equivalence)",
           f"{checks} comparisons within 1e-12 in {elapsed:.2f}s")


def test_criterion_2_relative_evolution_arithmetic():
    gain = relative_evolution(0.575, 0.530)
    assert gain == pytest.approx(0.085, abs=0.01)    # published "+8%"
    drop = relative_evolution(0.496, 0.527)
    assert drop == pytest.approx(-0.059, abs=0.01)   # published "-5%"
    report("criterion 2 (relative evolution)",
           f"(0.575, 0.530) -> {gain:+.1%}; (0.496, 0.527) -> {drop:+.1%}")


def test_criterion_3_intransigence_exactly_zero():
    start = time.monotonic()
    manifest, tables = fusion_setup(seeds=(3,), n_basic=7, n_compound=15)
    man = manifest(("mod_a", "mod_b"))
    assert len(man.tasks) == 6
    result = run_continual(man, [tables["mod_a"], tables["mod_b"]], seed=3)
    for k in range(1, 7):
        assert result.joint_reference_accuracies[k - 1] == result.matrix.get(k, k)
    im = result.metrics().im
    assert all(v == 0.0 for v in im)
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    report("criterion 3 (IM = 0)",
           f"IM_k = 0 exactly for k = 1..6 in {elapsed:.1f}s")


def test_criterion_4_no_interference():
    from clbgmm.dataset import build_task_sequence
    from clbgmm.ensemble import ClassConditionalEnsemble, train_task
    from clbgmm.protocol import _build_fusion

    manifest, tables = fusion_setup(seeds=(0,))
    man = manifest(("mod_a", "mod_b"))
    task_checks = 0
    for seed in range(5):
        batches = build_task_sequence(man, [tables["mod_a"], tables["mod_b"]])
        fusion = _build_fusion(man, batches[0])
        ensemble = ClassConditionalEnsemble(fusion=fusion)
        snapshot = {}
        for batch in batches:
            train_task(ensemble, batch, man.bgmm_config, seed)
            for label, blob in snapshot.items():
                assert ensemble.models[label].to_bytes() == blob
            snapshot = {c: m.to_bytes() for c, m in ensemble.models.items()}
            task_checks += 1
    report("criterion 4 (no interference)",
           f"previously trained mixtures byte-identical across {task_checks} tasks x 5 seeds")


def test_criterion_5_pruning_recovery():
    start = time.monotonic()
    centers = (np.array([0.0, 0.0]), np.array([10.0, 10.0]))
    exact_two = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        X = np.vstack([rng.normal(c, 1.0, size=(100, 2)) for c in centers])
        mix, _ = fit(X, BgmmConfig(max_components=8), seed=seed)
        if mix.n_components == 2:
            exact_two += 1
            # oracle: classical EM with J fixed to 2, matched by nearest center
            _, em_means, _ = classical_em(X, 2, seed=seed)
            for m in mix.means:
                assert min(np.linalg.norm(m - em) for em in em_means) < 0.5
            for m in mix.means:
                assert min(np.linalg.norm(m - c) for c in centers) < 0.5
    elapsed = time.monotonic() - start
    assert exact_two >= 95
    assert elapsed < 30.0
    report("criterion 5 (pruning recovery)",
           f"{exact_two}/100 seeds with exactly 2 components in {elapsed:.1f}s")


def test_criterion_6_elbo_monotonicity():
    worst = np.inf
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n_clusters = int(rng.integers(1, 4))
        d = int(rng.integers(1, 6))
        X = np.vstack([
            rng.normal(rng.uniform(-5, 5, d), rng.uniform(0.5, 2.0), size=(40, d))
            for _ in range(n_clusters)])
        ct = ("spherical", "diagonal", "full")[seed % 3]
        _, state = fit(X, BgmmConfig(max_components=6, covariance_type=ct), seed=seed)
        diffs = np.diff(state.elbo_trace)
        if diffs.size:
            worst = min(worst, float(diffs.min()))
        assert np.all(diffs >= -1e-8)
    report("criterion 6 (ELBO monotonicity)",
           f"50 traces non-decreasing; smallest step {worst:.3e}")


def _ablation_data(seed, d=50, n_classes=7, n_train=30, n_test=100):
    rng = np.random.default_rng(seed)
    scales = np.exp(rng.uniform(np.log(0.2), np.log(5.0), d))  # shared anisotropy
    means = rng.normal(0, 0.45, (n_classes, d)) * scales
    train = [means[c] + rng.normal(0, 1, (n_train, d)) * scales for c in range(n_classes)]
    test = [means[c] + rng.normal(0, 1, (n_test, d)) * scales for c in range(n_classes)]
    return train, test


def _ensemble_accuracy(models, sets):
    X = np.vstack(sets)
    y = np.repeat(np.arange(len(sets)), [len(s) for s in sets])
    scores = np.column_stack([log_likelihood_batch(m, X) for m in models])
    return float(np.mean(np.argmax(scores, axis=1) == y))


def test_criterion_7_covariance_ablation_direction():
    start = time.monotonic()
    train, test = _ablation_data(seed=0)
    accs = {}
    for ct in ("spherical", "diagonal", "full"):
        # weakly-informative fixed rate: lets the full structure overfit
        # its O(D^2) parameters on 30 samples, as in the published ablation
        cfg = BgmmConfig(max_components=2, covariance_type=ct, precision_prior_rate=0.5)
        models = [fit(t, cfg, seed=c)[0] for c, t in enumerate(train)]
        accs[ct] = (_ensemble_accuracy(models, train), _ensemble_accuracy(models, test))
    elapsed = time.monotonic() - start
    assert accs["full"][0] >= 0.98
    assert accs["full"][1] <= accs["diagonal"][1] - 0.10
    assert accs["diagonal"][1] >= accs["spherical"][1]
    assert elapsed < 120.0
    report("criterion 7 (covariance ablation direction)",
           f"train/test full {accs['full'][0]:.3f}/{accs['full'][1]:.3f}, "
           f"diagonal {accs['diagonal'][0]:.3f}/{accs['diagonal'][1]:.3f}, "
           f"spherical {accs['spherical'][0]:.3f}/{accs['spherical'][1]:.3f} "
           f"in {elapsed:.1f}s")


def _modality_runs(seeds):
    manifest, tables = fusion_setup(seeds=seeds)
    runs = {}
    for name, mods in (("merged", ("mod_a", "mod_b")),
                       ("mod_a", ("mod_a",)),
                       ("mod_b", ("mod_b",))):
        man = manifest(mods)
        results, _ = multi_seed(man, [tables[m] for m in mods],
                                compute_joint_reference=False)
        runs[name] = results
    return runs


def test_criterion_8_fusion_superiority_direction():
    start = time.monotonic()
    runs = _modality_runs(seeds=(1, 2, 3, 4, 5))
    final_aa = {k: np.mean([r.metrics().aa[-1] for r in v]) for k, v in runs.items()}
    final_fm = {k: np.mean([r.metrics().fm[-1] for r in v]) for k, v in runs.items()}
    elapsed = time.monotonic() - start
    aa_gap = final_aa["merged"] - max(final_aa["mod_a"], final_aa["mod_b"])
    fm_gap = final_fm["merged"] - min(final_fm["mod_a"], final_fm["mod_b"])
    assert aa_gap >= 0.05
    assert fm_gap <= 0.02
    assert elapsed < 180.0
    report("criterion 8 (fusion superiority direction)",
           f"final AA merged {final_aa['merged']:.3f} vs best single "
           f"{max(final_aa['mod_a'], final_aa['mod_b']):.3f} (gap {aa_gap:+.3f}); "
           f"FM gap {fm_gap:+.3f}; {elapsed:.1f}s")


def test_criterion_9_oracle_dominance():
    runs = _modality_runs(seeds=(1,))
    by_id = {}
    for name in ("mod_a", "mod_b"):
        by_id[name] = {sid: pred for sid, _, pred in runs[name][0].per_task_predictions[-1]}
    final = runs["mod_a"][0].per_task_predictions[-1]
    truth = [t for _, t, _ in final]
    preds_a = [by_id["mod_a"][sid] for sid, _, _ in final]
    preds_b = [by_id["mod_b"][sid] for sid, _, _ in final]
    acc_a = sum(p == t for p, t in zip(preds_a, truth)) / len(truth)
    acc_b = sum(p == t for p, t in zip(preds_b, truth)) / len(truth)
    union = oracle_union_accuracy(preds_a, preds_b, truth)
    assert union >= max(acc_a, acc_b)
    assert union > max(acc_a, acc_b)  # strict on the fusion synthetic dataset
    report("criterion 9 (oracle dominance)",
           f"union {union:.3f} > max(individual) {max(acc_a, acc_b):.3f}")


def test_criterion_10_cmd_run_determinism(tmp_path):
    data_dir = tmp_path / "data"
    assert main(["synth", "--out", str(data_dir), "--basic", "4", "--compound", "3",
                 "--per-class-train", "20", "--per-class-test", "8", "--seed", "9"]) == 0
    out1 = tmp_path / "r1" / "res"
    out2 = tmp_path / "r2" / "res"
    assert main(["run", "--manifest", str(data_dir / "manifest.json"),
                 "--out", str(out1)]) == 0
    assert main(["run", "--manifest", str(data_dir / "manifest.json"),
                 "--out", str(out2)]) == 0
    a = Path(f"{out1}_seed9.json").read_bytes()
    b = Path(f"{out2}_seed9.json").read_bytes()
    assert a == b
    report("criterion 10 (cmd_run determinism)",
           f"result files byte-identical ({len(a)} bytes)")


def test_criterion_11_density_normalization_1d():
    from scipy.integrate import quad

    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(i)
        n_clusters = int(rng.integers(1, 3))
        X = np.concatenate([
            rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 2.0), size=60)
            for _ in range(n_clusters)])[:, None]
        ct = ("spherical", "diagonal", "full")[i % 3]
        mix, _ = fit(X, BgmmConfig(max_components=4, covariance_type=ct), seed=i)
        sigma = float(np.sqrt(np.max(mix.covariances)))
        lo = float(mix.means.min()) - 10 * sigma
        hi = float(mix.means.max()) + 10 * sigma
        total, _ = quad(lambda x: np.exp(log_likelihood(mix, [x])), lo, hi, limit=200)
        worst = max(worst, abs(total - 1.0))
        assert total == pytest.approx(1.0, abs=1e-3)
    report("criterion 11 (density normalization)",
           f"20 fits integrate to 1 within 1e-3 (worst error {worst:.2e})")
