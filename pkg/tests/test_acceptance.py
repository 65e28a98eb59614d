"""End-to-end acceptance criteria A1-A9.

Each test records one PASS/FAIL line; the lines are echoed in the pytest
terminal summary (see conftest.py) so ``pytest tests/test_acceptance.py``
ends with a compact report.
"""
import json
import math
import os
import time

import numpy as np

from conftest import finite_difference_errors, perturbed_model, random_batch
from test_loss import oracle_total, unit_rows

from hmavd.cli import main
from hmavd.core import Modality, ParamStore, RngStream
from hmavd.data import (
    EpochedEeg, SyntheticConfig, average_repeats, downsample, epoch_and_baseline, generate_synthetic, mvnn,
    noise_covariance,
)
from hmavd.loss import LossConfig, cosine_alignment_loss, info_nce, total_loss
from hmavd.mcdb import PER_ROW, BalanceConfig, balance, modality_weight
from hmavd.nn import ModelConfig
from hmavd.spr import OptimConfig, SprConfig, SprOptimState, noise_sigma, spr_adam_step
from hmavd.trainer import Experiment, TrainConfig, evaluate_model, train

RESULTS = []


def record(name, ok, detail, elapsed, limit):
    ok = bool(ok) and elapsed < limit
    line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.2f}s < {limit:g}s]"
    RESULTS.append(line)
    print(line)
    return ok


def test_a1_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        model = perturbed_model(seed, d=8)
        batch = random_batch(seed, B=4, d=8, latent=4)
        errors = finite_difference_errors(model, batch, LossConfig(), step=1e-5)
        worst = max(worst, max(errors.values()))
    elapsed = time.perf_counter() - t0
    assert record("A1", worst <= 1e-4, f"max relative FD error {worst:.2e} over 20 models (tol 1e-4)", elapsed, 30)


def test_a2_loss_identities():
    t0 = time.perf_counter()
    checks = {}
    x = unit_rows(RngStream(0).generator, 1, 8)
    checks["B=1 -> 0"] = info_nce(x, x, 0.07) == 0.0
    same = np.array([[1.0, 0.0], [1.0, 0.0]])
    checks["uniform -> ln2"] = abs(info_nce(same, same, 0.07) - math.log(2)) <= 1e-9
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    checks["cos {0,1,2}"] = (
        cosine_alignment_loss(a, a) == 0.0
        and abs(cosine_alignment_loss(a, a[::-1]) - 1.0) <= 1e-12
        and abs(cosine_alignment_loss(a, -a) - 2.0) <= 1e-12
    )
    worst = 0.0
    for seed in range(100):
        rng = RngStream(seed).generator
        e, i, t, t_raw = (unit_rows(rng, 4, 8) for _ in range(4))
        lam, tau = float(rng.uniform(0, 2)), float(rng.uniform(0.05, 1.0))
        rep = total_loss(e, i, t, t_raw, LossConfig(tau=tau, lambda_r=lam))
        worst = max(worst, abs(rep.total - oracle_total(e, i, t, t_raw, tau, lam)))
    checks["oracle x100"] = worst <= 1e-9
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    assert record("A2", not failed, f"identities ok={not failed}, oracle max diff {worst:.1e}", elapsed, 5), failed


def test_a3_schedules():
    t0 = time.perf_counter()
    cfg = BalanceConfig(gamma=0.7)
    below = all(modality_weight(r, cfg) == 1.0 for r in np.linspace(1e-6, 1.0, 200))
    continuous = all(abs(modality_weight(1.0 + h, cfg) - 1.0) <= 10 * h for h in (1e-4, 1e-7, 1e-10))
    grid = np.linspace(1.001, 20.0, 2000)
    kappas = [modality_weight(r, cfg) for r in grid]
    decreasing = all(b < a for a, b in zip(kappas, kappas[1:]))
    direct = abs(modality_weight(2.0, cfg) - (1.0 - math.tanh(0.7))) <= 1e-9

    scfg = SprConfig(sigma_max=0.05, beta_decay=1.0, T=200)
    sig = [noise_sigma(t, scfg) for t in range(201)]
    ends = sig[0] == 0.05 and sig[-1] == 0.0
    monotone = all(b <= a for a, b in zip(sig, sig[1:]))
    midpoint = sig[100] == 0.025
    for beta in (0.5, 2.0):
        s = [noise_sigma(t, SprConfig(sigma_max=0.05, beta_decay=beta, T=200)) for t in range(201)]
        monotone &= all(b <= a for a, b in zip(s, s[1:]))
    ok = all([below, continuous, decreasing, direct, ends, monotone, midpoint])
    elapsed = time.perf_counter() - t0
    detail = (f"kappa: <=1 {below}, continuous {continuous}, decreasing {decreasing}, direct {direct}; "
              f"sigma: ends {ends}, monotone {monotone}, midpoint {midpoint}")
    assert record("A3", ok, detail, elapsed, 1)


def _oracle_adam(theta, A, b, steps, eta, b1, b2, eps):
    n = len(theta)
    theta = list(theta)
    m, v = [0.0] * n, [0.0] * n
    for _ in range(steps):
        grad = [sum(A[i][j] * theta[j] for j in range(n)) - b[i] for i in range(n)]
        for i in range(n):
            m[i] = b1 * m[i] + (1 - b1) * grad[i]
            v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i]
            theta[i] -= eta * m[i] / (math.sqrt(v[i]) + eps)
    return theta


def _tiny_exp(**kw):
    train_kw = dict(epochs=3, batch_size_train=16, batch_size_eval=64, lr=1e-3, val_size=8, seed=0)
    train_kw.update(kw)
    return Experiment(train=TrainConfig(**train_kw), model=ModelConfig(hidden_dim=8, r_text=4, r_image=2))


def test_a4_optimizer_equivalence(tiny_dataset):
    t0 = time.perf_counter()
    rng = RngStream(11).generator
    n = 6
    q = rng.normal(size=(n, n))
    A = q @ q.T + n * np.eye(n)
    b = rng.normal(size=n)
    theta0 = rng.normal(size=n)
    store = ParamStore()
    p = store.add("quad", "theta", theta0.copy(), "text")
    state = SprOptimState()
    ocfg = OptimConfig(eta=0.01, beta1=0.5, beta2=0.999, eps=1e-8)
    scfg = SprConfig(sigma_max=0.0, T=100)
    noise = RngStream(0)
    for _ in range(100):
        p.grad[...] = A @ p.value - b
        spr_adam_step(store, state, ocfg, scfg, noise)
    oracle = _oracle_adam(theta0.tolist(), A.tolist(), b.tolist(), 100, 0.01, 0.5, 0.999, 1e-8)
    diff = float(np.max(np.abs(p.value - np.array(oracle))))

    exp = _tiny_exp(mcdb=False, spr=False)
    r1, r2 = train(tiny_dataset, experiment=exp), train(tiny_dataset, experiment=exp)
    same = r1.metrics_csv() == r2.metrics_csv() and all(
        np.array_equal(a.value, c.value) for (_, a), (_, c) in zip(r1.checkpoint, r2.checkpoint)
    ) and all(np.array_equal(a.value, c.value) for (_, a), (_, c) in zip(r1.model.store, r2.model.store))
    elapsed = time.perf_counter() - t0
    assert record("A4", diff <= 1e-12 and same,
                  f"quadratic max diff {diff:.1e} (tol 1e-12); bitwise-identical reruns {same}", elapsed, 10)


# Dominance scenario: text features ten times cleaner than image features.
A5_SNR = {"eeg": 1.0, "image": 0.1, "text": 1.0}


def _a5_run(seed, mcdb_on):
    ds = generate_synthetic(SyntheticConfig(snr=A5_SNR, seed=seed))
    exp = Experiment(
        train=TrainConfig(epochs=20, batch_size_train=64, lr=1e-3, val_size=40, seed=seed, mcdb=mcdb_on, spr=True),
        model=ModelConfig(r_text=4, r_image=2),
        loss=LossConfig(lambda_r=0.0),
    )
    return train(ds, experiment=exp)


def test_a5_dominance_mitigation():
    t0 = time.perf_counter()
    pairs, worst_scaling = [], 0.0
    for seed in range(5):
        on, off = _a5_run(seed, True), _a5_run(seed, False)
        imb_on = float(np.mean([abs(s.rho["text"] - 1) for s in on.steps]))
        imb_off = float(np.mean([abs(s.rho["text"] - 1) for s in off.steps]))
        pairs.append((imb_on, imb_off))
        for s in on.steps:
            worst_scaling = max(worst_scaling, abs(s.grad_post["text"] - s.kappa["text"] * s.grad_pre["text"]))
    wins = sum(a < b for a, b in pairs)
    elapsed = time.perf_counter() - t0
    detail = ("mean |rho_text-1| on/off: " + ", ".join(f"{a:.2f}/{b:.2f}" for a, b in pairs)
              + f"; wins {wins}/5; max |post - kappa*pre| {worst_scaling:.1e}")
    assert record("A5", wins == 5 and worst_scaling <= 1e-12, detail, elapsed, 300)


def _binomial_tail(k, n, p):
    return sum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(k, n + 1))


def test_a6_zero_shot_signal():
    t0 = time.perf_counter()
    ds = generate_synthetic(SyntheticConfig(n_train_classes=40, n_test_classes=10, feature_dim=16, seed=0))
    exp = Experiment(train=TrainConfig(epochs=30, batch_size_train=64, lr=1e-3, val_size=40, seed=0),
                     model=ModelConfig(r_text=4, r_image=2))
    report = train(ds, experiment=exp)
    ev = evaluate_model(report.best_model(), ds, "test", w_text=0.5, ks=(1, 5))
    n = ev.n_samples
    hits = round(ev.top1 * n)
    p_value = _binomial_tail(hits, n, 0.1)
    elapsed = time.perf_counter() - t0
    ok = ev.top1 >= 0.30 and ev.top5 >= ev.top1 and n >= 200 and p_value < 0.01
    assert record("A6", ok, f"top1 {ev.top1:.3f} top5 {ev.top5:.3f} on {n} trials, binomial p {p_value:.1e}",
                  elapsed, 180)


def test_a7_per_row_degeneracy():
    t0 = time.perf_counter()
    cfg = BalanceConfig(mode=PER_ROW)
    worst = 0.0
    for seed in range(50):
        rng = RngStream(seed).generator
        B = int(rng.integers(2, 33))
        e, i, t = (unit_rows(rng, B, 8) for _ in range(3))
        rho, _ = balance(e, {Modality.IMAGE: i, Modality.TEXT: t}, cfg)
        expected = B / (B + cfg.epsilon)
        worst = max(worst, abs(rho[Modality.IMAGE] - expected), abs(rho[Modality.TEXT] - expected))
    elapsed = time.perf_counter() - t0
    assert record("A7", worst <= 1e-9, f"max |rho - B/(B+eps)| {worst:.1e} over 50 inputs", elapsed, 1)


def _exact_cov_trials(n, channels, timepoints, scale, seed):
    rng = RngStream(seed)
    out = np.empty((n, channels, timepoints))
    for t in range(timepoints):
        a = rng.normal(size=(n, channels))
        a -= a.mean(axis=0)
        qm, _ = np.linalg.qr(a)
        out[:, :, t] = qm * math.sqrt(n - 1) * scale
    return out


def test_a8_preprocessing_chain():
    t0 = time.perf_counter()
    e = epoch_and_baseline(np.full((4, 3000), -3.5), [250, 1500], 1000.0)
    zeros = bool(np.all(e.data == 0.0))
    d = downsample(EpochedEeg(RngStream(1).normal(size=(3, 2, 1000)), 1000.0), 250)
    quarter = d.data.shape[-1] == 250

    ident = _exact_cov_trials(40, 4, 6, np.ones(4), seed=2)
    ident_err = float(np.max(np.abs(mvnn(EpochedEeg(ident, 250.0)).data - ident)))
    diag = _exact_cov_trials(40, 2, 6, np.sqrt([2.0, 3.0]), seed=3)
    var = noise_covariance(mvnn(EpochedEeg(diag, 250.0), shrinkage=1.0).data, shrinkage=0.0).diagonal()
    var_gap = float(abs(var[0] - var[1]))

    ratios = {}
    for k in (2, 4, 8):
        noise = RngStream(10 + k).normal(size=(500 * k, 1, 1))
        ratios[k] = float(average_repeats(EpochedEeg(noise, 250.0), k).data.var() / noise.var() * k)
    law = all(abs(r - 1.0) <= 0.2 for r in ratios.values())
    elapsed = time.perf_counter() - t0
    ok = zeros and quarter and ident_err <= 1e-9 and var_gap <= 1e-6 and law
    detail = (f"baseline zeros {zeros}; 1000->{d.data.shape[-1]} samples; mvnn identity err {ident_err:.1e}; "
              f"diag(2,3) variance gap {var_gap:.1e}; k*var ratio {', '.join(f'{v:.3f}' for v in ratios.values())}")
    assert record("A8", ok, detail, elapsed, 30)


def test_a9_ablation_harness(tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "data": {"n_train_classes": 20, "n_test_classes": 6, "samples_per_class": 6, "latent_dim": 4,
                 "eeg_channels": 4, "eeg_timepoints": 4, "feature_dim": 8, "val_size": 12, "seed": 0},
        "model": {"hidden_dim": 16, "r_text": 4, "r_image": 2},
        "train": {"epochs": 5, "batch_size_train": 32, "lr": 0.001, "val_size": 12, "seed": 0},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    ds = str(tmp_path / "ds")
    codes = [main(["gen-data", "--config", str(path), "--out", ds])]
    tables = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        codes.append(main(["ablate", "--config", str(path), "--dataset", ds, "--out", out]))
        with open(os.path.join(out, "ablation.csv"), "rb") as fh:
            tables.append(fh.read())
    rows = tables[0].decode().splitlines()
    names = [r.split(",")[0] for r in rows[1:]]
    expected = ["base", "+text", "+text+adapter", "+text+mcdb+spr", "all"]
    elapsed = time.perf_counter() - t0
    ok = codes == [0, 0, 0] and names == expected and tables[0] == tables[1]
    assert record("A9", ok, f"rows {names}; byte-identical rerun {tables[0] == tables[1]}", elapsed, 600)
