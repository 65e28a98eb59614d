import sys

import numpy as np
import pytest

from hmavd import autograd as ag
from hmavd.core import RngStream
from hmavd.data import SyntheticConfig, generate_synthetic
from hmavd.loss import LossConfig, total_loss_graph
from hmavd.nn import HMAVDModel, ModelConfig


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(SyntheticConfig(
        n_train_classes=12, n_test_classes=4, samples_per_class=4, latent_dim=4,
        eeg_channels=3, eeg_timepoints=4, feature_dim=8, val_size=8, seed=0,
    ))


def perturbed_model(seed, d=8, channels=2, timepoints=4, hidden=5, r_text=2, r_image=4):
    """Tiny model with every parameter (biases included) randomized."""
    cfg = ModelConfig(eeg_channels=channels, eeg_timepoints=timepoints, hidden_dim=hidden,
                      embed_dim=d, r_text=r_text, r_image=r_image)
    rng = RngStream(seed)
    model = HMAVDModel(cfg, rng.child("init"))
    noise = rng.child("perturb")
    for _, p in model.store:
        p.value = p.value + 0.3 * noise.normal(size=p.value.shape)
    return model


def random_batch(seed, B=4, d=8, channels=2, timepoints=4, latent=4):
    ds = generate_synthetic(SyntheticConfig(
        n_train_classes=B, n_test_classes=1, samples_per_class=1, latent_dim=latent,
        eeg_channels=channels, eeg_timepoints=timepoints, feature_dim=d, val_size=0, seed=seed,
    ))
    tr = ds.subset("train")
    return tr.eeg, tr.image, ds.text(tr.labels)


def loss_value(model, batch, cfg):
    total, _ = total_loss_graph(model.forward(*batch, record=False), cfg)
    return float(total.value)


def finite_difference_errors(model, batch, cfg=LossConfig(), step=1e-5):
    """Relative error ||analytic - numeric|| / ||numeric|| per parameter tensor."""
    model.store.zero_grad()
    total, _ = total_loss_graph(model.forward(*batch), cfg)
    ag.backward(total)
    errors = {}
    for key, p in model.store:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value(model, batch, cfg)
            flat[i] = orig - step
            down = loss_value(model, batch, cfg)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        denom = max(np.linalg.norm(numeric), 1e-8)
        errors[key] = float(np.linalg.norm(analytic - numeric) / denom)
    return errors


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
