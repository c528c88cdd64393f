"""scikit-learn style wrappers.

Following the scikit-learn convention, samples are rows: the features are
measurements (``n_samples x m``) and the targets are signals
(``n_samples x n``). The functional API underneath works on columns.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import network as net
from .acf import AcfProblem, acf_solve
from .operators import build_operator, init_learnable
from .schedule import build_acf, build_constant, build_geometric


def make_schedule(kind, L, mu, alpha=0.9, beta=0.9, L_tilde=1000.0):
    if kind == "geometric":
        return build_geometric(L, mu, alpha, beta, L_tilde)
    if kind == "acf":
        return build_acf(L, mu)
    if kind == "constant":
        return build_constant(L, mu)
    raise ValueError(f"unknown schedule {kind!r}")


def _check_A(A, m=None):
    A = check_array(A, ensure_2d=True)
    if m is not None and A.shape[0] != m:
        raise ValueError(f"A has {A.shape[0]} rows but measurements have {m} features")
    return A


class DECONET(BaseEstimator, RegressorMixin):
    """Unfolded analysis decoder with a learned operator ``W``.

    Parameters mirror the training options of :func:`deconet.network.train`.
    ``eps="auto"`` takes the mean training residual ``||y - A x||``;
    ``B_out="auto"`` takes the largest training signal norm.
    """

    def __init__(self, A=None, N=None, L=10, mu=100.0, schedule="geometric", alpha=0.9,
                 beta=0.9, L_tilde=1000.0, eps="auto", B_out="auto", lr=1e-4, batch=128,
                 patience=10, max_epochs=200, lambda_cap=None, init="normal", init_a=2.0,
                 init_b=2.0, validation_fraction=0.2, random_state=0):
        self.A = A
        self.N = N
        self.L = L
        self.mu = mu
        self.schedule = schedule
        self.alpha = alpha
        self.beta = beta
        self.L_tilde = L_tilde
        self.eps = eps
        self.B_out = B_out
        self.lr = lr
        self.batch = batch
        self.patience = patience
        self.max_epochs = max_epochs
        self.lambda_cap = lambda_cap
        self.init = init
        self.init_a = init_a
        self.init_b = init_b
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self, X, Y, A):
        eps = self.eps
        if eps == "auto":
            eps = float(np.mean(np.linalg.norm(Y - A @ X, axis=0)))
        B_out = self.B_out
        if B_out == "auto":
            B_out = float(np.max(np.linalg.norm(X, axis=0)))
        sch = make_schedule(self.schedule, self.L, self.mu, self.alpha, self.beta, self.L_tilde)
        return net.DecoderConfig(sch, float(B_out), float(eps))

    def fit(self, Y, X, eval_set=None):
        """Train on measurements ``Y`` (rows) and signals ``X`` (rows).

        ``eval_set=(Y_val, X_val)`` supplies the held-out split used for the
        EGE early-stopping rule; otherwise the last ``validation_fraction`` of
        the rows is held out.
        """
        Y, X = check_X_y(Y, X, multi_output=True, y_numeric=True)
        if X.ndim == 1:
            X = X[:, None]
        if self.A is None:
            raise ValueError("a measurement matrix A is required")
        A = _check_A(self.A, Y.shape[1])
        if A.shape[1] != X.shape[1]:
            raise ValueError(f"A maps R^{A.shape[1]} but targets have {X.shape[1]} features")
        if eval_set is None:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must lie in (0, 1)")
            n_tr = int(round((1 - self.validation_fraction) * Y.shape[0]))
            if n_tr in (0, Y.shape[0]):
                raise ValueError("too few samples to hold out a validation split")
            Y_tr, X_tr, Y_va, X_va = Y[:n_tr], X[:n_tr], Y[n_tr:], X[n_tr:]
        else:
            Y_tr, X_tr = Y, X
            Y_va, X_va = check_X_y(eval_set[0], eval_set[1], multi_output=True)
            X_va = X_va if X_va.ndim == 2 else X_va[:, None]
        n = A.shape[1]
        N = self.N if self.N is not None else 5 * n
        cfg = self._config(X_tr.T, Y_tr.T, A)
        W0 = init_learnable(n, N, self.init, self.random_state, self.init_a, self.init_b).W
        opts = net.TrainOptions(lr=self.lr, batch=self.batch, patience=self.patience,
                                max_epochs=self.max_epochs, seed=self.random_state,
                                lambda_cap=self.lambda_cap)
        res = net.train(X_tr.T, Y_tr.T, X_va.T, Y_va.T, A, cfg, W0, opts)
        self.W_ = res.W
        self.config_ = cfg
        self.A_ = A
        self.history_ = res.history
        self.best_epoch_ = res.best_epoch
        self.n_features_in_ = Y.shape[1]
        return self

    def predict(self, Y):
        check_is_fitted(self, "W_")
        Y = check_array(Y)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {Y.shape[1]}")
        return net.predict(self.W_, Y.T, self.config_, self.A_).T


class ACFDecoder(BaseEstimator, RegressorMixin):
    """Fixed-operator ACF reconstruction; ``fit`` only validates and builds ``W``."""

    def __init__(self, A=None, operator="haar", iters=10, mu=100.0, eps=0.0, schedule=None):
        self.A = A
        self.operator = operator
        self.iters = iters
        self.mu = mu
        self.eps = eps
        self.schedule = schedule

    def fit(self, Y, X=None):
        if self.A is None:
            raise ValueError("a measurement matrix A is required")
        Y = check_array(Y)
        A = _check_A(self.A, Y.shape[1])
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if isinstance(self.operator, str):
            self.W_ = build_operator(self.operator, A.shape[1]).W
        else:
            self.W_ = check_array(self.operator)
            if self.W_.shape[1] != A.shape[1]:
                raise ValueError("operator and A disagree on n")
        self.A_ = A
        self.n_features_in_ = Y.shape[1]
        return self

    def predict(self, Y):
        check_is_fitted(self, "W_")
        Y = check_array(Y)
        if Y.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {Y.shape[1]}")
        sch = None
        if self.schedule is not None:
            sch = make_schedule(self.schedule, self.iters, self.mu)
        res = acf_solve(AcfProblem(self.A_, self.W_, Y.T, self.mu, self.eps), self.iters, sch)
        return res.x.T
