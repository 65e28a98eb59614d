import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hmavd import HMAVDEncoder
from hmavd.data import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="module")
def zs_data():
    ds = generate_synthetic(SyntheticConfig(n_train_classes=20, n_test_classes=5, samples_per_class=10, latent_dim=4,
                                            eeg_channels=4, eeg_timepoints=4, feature_dim=8, val_size=20, seed=2))
    return ds


def small(**kw):
    params = dict(hidden_dim=16, r_text=4, r_image=2, epochs=15, batch_size=64, lr=1e-3, val_size=20)
    params.update(kw)
    return HMAVDEncoder(**params)


def test_params_roundtrip_and_clone():
    est = small(gamma=0.3)
    assert est.get_params()["gamma"] == 0.3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    est.set_params(use_mcdb=False)
    assert est.use_mcdb is False


def test_not_fitted():
    with pytest.raises(NotFittedError):
        small().transform(np.zeros((2, 4, 4)))


def test_fit_transform_score(zs_data):
    tr = zs_data.subset("train")
    est = small().fit(tr.eeg, tr.labels, image_features=tr.image, text_features=zs_data.text_features[np.unique(tr.labels)])
    test = zs_data.subset("test")
    z = est.transform(test.eeg)
    assert z.shape == (len(test), 8)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)
    ids, img, txt = zs_data.templates("test")
    top1 = est.score(test.eeg, test.labels, ids, img, txt)
    top5 = est.score(test.eeg, test.labels, ids, img, txt, k=5)
    assert top1 > 0.2 + 0.1  # chance is 0.2
    assert top5 == 1.0
    pred = est.predict(test.eeg, ids, img, txt)
    assert np.mean(pred == test.labels) == top1
    assert est.n_features_in_ == 16 and list(est.classes_) == list(np.unique(tr.labels))


def test_per_sample_text_and_determinism(zs_data):
    tr = zs_data.subset("train")
    a = small(epochs=2).fit(tr.eeg, tr.labels, image_features=tr.image, text_features=zs_data.text(tr.labels))
    b = small(epochs=2).fit(tr.eeg, tr.labels, image_features=tr.image,
                            text_features=zs_data.text_features[np.unique(tr.labels)])
    np.testing.assert_array_equal(a.transform(tr.eeg), b.transform(tr.eeg))


def test_fit_validation(zs_data):
    tr = zs_data.subset("train")
    with pytest.raises(ValueError):
        small().fit(tr.eeg, tr.labels, image_features=tr.image)
    with pytest.raises(ValueError):
        small().fit(tr.eeg[:5], tr.labels, image_features=tr.image, text_features=zs_data.text(tr.labels))
    with pytest.raises(ValueError):
        small().fit(tr.eeg.reshape(len(tr), -1), tr.labels, image_features=tr.image, text_features=zs_data.text(tr.labels))
    est = small(use_text=False, use_mcdb=False, epochs=1).fit(tr.eeg, tr.labels, image_features=tr.image)
    assert est.report_.steps[0].grad_pre["text"] == 0.0
