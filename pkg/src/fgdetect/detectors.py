"""Estimator-style wrappers around the detector runtimes.

The detectors follow the scikit-learn convention: constructors only store
hyperparameters, `fit` does the work, `predict` maps blocks of channel
observations to symbol decisions. Because detection is unsupervised at
inference time, `fit` for the fixed-structure detectors just builds the
runtime, while the clustering detector trains its structure weights.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .channel import ChannelSpec, noise_variance_from_esn0
from .program import CCRuntime, FfgRuntime, UfgRuntime
from .spa import hard_decision
from .training import TrainConfig, train


class SumProductDetector(BaseEstimator):
    """Fixed-structure sum-product detector over a cyclic observation block.

    variant "ufg" uses one factor per observation plus pairwise interference
    couplings; "ffg" uses one squared-error factor per observation.
    """

    def __init__(self, taps=(1.0,), variant="ffg", k=64, n_iterations=10,
                 esn0_db=10.0):
        self.taps = taps
        self.variant = variant
        self.k = k
        self.n_iterations = n_iterations
        self.esn0_db = esn0_db

    def fit(self, X=None, y=None):
        spec = ChannelSpec(tuple(float(t) for t in self.taps))
        if self.variant == "ufg":
            self.runtime_ = UfgRuntime(spec, self.k)
        elif self.variant == "ffg":
            self.runtime_ = FfgRuntime(spec, self.k)
        else:
            raise ValueError(f"unknown variant '{self.variant}'")
        self.sigma2_ = noise_variance_from_esn0(self.esn0_db)
        return self

    def predict_proba(self, X):
        if not hasattr(self, "runtime_"):
            raise RuntimeError("call fit before predict")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.runtime_.marginals(X, self.sigma2_, self.n_iterations)

    def predict(self, X):
        return hard_decision(self.predict_proba(X))


class ContinuousClusteringDetector(BaseEstimator):
    """Detector whose factor-graph structure is learned by training.

    `fit` ignores its arguments and draws its own random training data; the
    channel model, not a dataset, defines the task.
    """

    def __init__(self, taps=(1.0,), k=64, d_max=4, span_limit=None,
                 minibatch_size=100, steps=2000, learning_rate=1e-4,
                 train_esn0_db=10.0, n_train_iterations=10, nbp=False,
                 seed=0, loss="soft_ber", esn0_db=10.0, alpha_thr=None):
        self.taps = taps
        self.k = k
        self.d_max = d_max
        self.span_limit = span_limit
        self.minibatch_size = minibatch_size
        self.steps = steps
        self.learning_rate = learning_rate
        self.train_esn0_db = train_esn0_db
        self.n_train_iterations = n_train_iterations
        self.nbp = nbp
        self.seed = seed
        self.loss = loss
        self.esn0_db = esn0_db
        self.alpha_thr = alpha_thr

    def fit(self, X=None, y=None):
        spec = ChannelSpec(tuple(float(t) for t in self.taps))
        config = TrainConfig(
            k=self.k,
            minibatch_size=self.minibatch_size,
            steps=self.steps,
            learning_rate=self.learning_rate,
            train_esn0_db=self.train_esn0_db,
            n_train_iterations=self.n_train_iterations,
            nbp=self.nbp,
            seed=self.seed,
            loss=self.loss,
        )
        state = train(spec, self.d_max, config, span_limit=self.span_limit)
        self.model_ = state.model
        if self.alpha_thr is not None:
            from .cluster import prune

            prune(self.model_.weights, self.alpha_thr)
        self.loss_history_ = state.loss_history
        self.runtime_ = CCRuntime(self.model_)
        self.sigma2_ = noise_variance_from_esn0(self.esn0_db)
        return self

    def predict_proba(self, X):
        if not hasattr(self, "runtime_"):
            raise RuntimeError("call fit before predict")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.runtime_.marginals(X, self.sigma2_)

    def predict(self, X):
        return hard_decision(self.predict_proba(X))
