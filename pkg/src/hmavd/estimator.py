"""scikit-learn compatible wrapper around the training loop.

``fit`` takes EEG trials as ``X`` with per-sample image features and
per-class text features as fit parameters; ``transform`` maps EEG into the
shared space. Zero-shot prediction needs templates for the unseen classes,
passed to ``predict``/``score``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import MultimodalDataset
from .evaluation import build_templates, rank_classes, topk_accuracy
from .loss import LossConfig
from .mcdb import BalanceConfig
from .nn import ModelConfig
from .spr import OptimConfig, SprConfig
from .trainer import Experiment, TrainConfig, train


class HMAVDEncoder(TransformerMixin, BaseEstimator):
    def __init__(
        self,
        hidden_dim=64,
        r_text=16,
        r_image=8,
        alpha=0.7,
        beta=0.5,
        tau=0.07,
        lambda_r=1.0,
        gamma=0.7,
        sigma_max=0.01,
        noise_decay=1.0,
        epochs=200,
        batch_size=1000,
        lr=2e-4,
        betas=(0.5, 0.999),
        val_size=740,
        use_text=True,
        use_adapter=True,
        use_mcdb=True,
        use_spr=True,
        w_text=0.5,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.r_text = r_text
        self.r_image = r_image
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.lambda_r = lambda_r
        self.gamma = gamma
        self.sigma_max = sigma_max
        self.noise_decay = noise_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.betas = betas
        self.val_size = val_size
        self.use_text = use_text
        self.use_adapter = use_adapter
        self.use_mcdb = use_mcdb
        self.use_spr = use_spr
        self.w_text = w_text
        self.random_state = random_state

    def _experiment(self):
        return Experiment(
            train=TrainConfig(
                epochs=self.epochs, batch_size_train=self.batch_size, lr=self.lr, betas=self.betas,
                tau=self.tau, val_size=self.val_size, seed=self.random_state, text_modality=self.use_text,
                adapter=self.use_adapter, mcdb=self.use_mcdb, spr=self.use_spr,
            ),
            model=ModelConfig(hidden_dim=self.hidden_dim, r_text=self.r_text, r_image=self.r_image,
                              alpha=self.alpha, beta=self.beta),
            loss=LossConfig(tau=self.tau, lambda_r=self.lambda_r),
            balance=BalanceConfig(gamma=self.gamma, tau=self.tau),
            spr=SprConfig(sigma_max=self.sigma_max, beta_decay=self.noise_decay),
            optim=OptimConfig(eta=self.lr, beta1=self.betas[0], beta2=self.betas[1]),
        )

    def fit(self, X, y, image_features=None, text_features=None):
        """Train on EEG ``X`` of shape (n, channels, time) with labels ``y``.

        ``image_features`` is (n, d); ``text_features`` is (n_classes, d)
        indexed by label, or (n, d) per sample.
        """
        X = check_array(X, allow_nd=True, ensure_min_samples=2)
        if X.ndim != 3:
            raise ValueError(f"X must be (n_samples, channels, time), got shape {X.shape}")
        if image_features is None:
            raise ValueError("image_features are required")
        image, y = check_X_y(image_features, y)
        if len(image) != len(X):
            raise ValueError(f"X has {len(X)} samples but image_features has {len(image)}")
        classes, codes = np.unique(y, return_inverse=True)
        if text_features is None:
            text = np.ones((len(classes), image.shape[1]))
            if self.use_text:
                raise ValueError("text_features are required when use_text=True")
        else:
            text = check_array(text_features)
            if len(text) == len(X) and len(text) != len(classes):
                text = np.stack([text[np.flatnonzero(codes == c)[0]] for c in range(len(classes))])
            elif len(text) != len(classes):
                raise ValueError(f"text_features needs one row per class ({len(classes)}) or per sample")
        ds = MultimodalDataset(X, image, codes, np.full(len(X), "train", dtype="<U5"), text, self.random_state)
        report = train(ds, experiment=self._experiment())
        self.model_ = report.best_model()
        self.report_ = report
        self.classes_ = classes
        self.n_features_in_ = X.shape[1] * X.shape[2]
        self.embedding_dim_ = image.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, allow_nd=True)
        return self.model_.embed_eeg(X)

    def templates(self, class_ids, image_templates, text_templates=None):
        check_is_fitted(self, "model_")
        w = self.w_text if text_templates is not None else 0.0
        return build_templates(np.asarray(class_ids), check_array(image_templates),
                               None if text_templates is None else check_array(text_templates), self.model_, w)

    def predict(self, X, class_ids, image_templates, text_templates=None):
        bank = self.templates(class_ids, image_templates, text_templates)
        return bank.class_ids[rank_classes(self.transform(X), bank)[:, 0]]

    def score(self, X, y, class_ids=None, image_templates=None, text_templates=None, k=1):
        """Zero-shot top-k accuracy against the given templates."""
        if class_ids is None or image_templates is None:
            raise ValueError("score needs class_ids and image_templates for the unseen classes")
        bank = self.templates(class_ids, image_templates, text_templates)
        return topk_accuracy(self.transform(X), y, bank, ks=[k]).accuracy[k]
