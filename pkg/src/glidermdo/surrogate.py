"""Stochastic radial-basis-function surrogates.

Each model is an ensemble of power-kernel fits ``|x - x_j|**eps`` with a
linear polynomial tail, one fit per shape exponent ``eps`` drawn from
``U(1, 3)``. The ensemble mean is the prediction and twice the ensemble
standard deviation is the uncertainty. A two-fidelity model adds a
discrepancy ensemble trained on the high-fidelity residuals.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

SURROGATE_VERSION = 1
EPS_RANGE = (1.0, 3.0)


class SurrogateError(ValueError):
    pass


@dataclass
class TrainingSet:
    inputs: np.ndarray
    outputs: np.ndarray
    fidelity: int = 1

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        if len(self.outputs) == 0:
            self.inputs = self.inputs.reshape(0, self.inputs.shape[-1])
        if self.inputs.shape[0] != len(self.outputs):
            raise ValueError("inputs and outputs differ in length")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise SurrogateError("non-finite training data")
        if len(self.outputs) > 1:
            d = _pairwise(self.inputs, self.inputs)
            d[np.diag_indices_from(d)] = np.inf
            if d.min() <= 1e-12:
                raise SurrogateError("duplicate training inputs")

    def __len__(self):
        return len(self.outputs)

    def digest(self):
        h = hashlib.sha256(self.inputs.tobytes())
        h.update(self.outputs.tobytes())
        return h.hexdigest()


def _pairwise(a, b):
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def epsilon_samples(n=16, seed=0):
    """Stratified low-discrepancy draws from ``U(1, 3)``."""
    if n < 1:
        raise ValueError("need at least one exponent")
    m = int(np.ceil(np.log2(n)))
    s = qmc.Sobol(1, scramble=True, seed=seed).random_base2(m).ravel()[:n]
    return EPS_RANGE[0] + (EPS_RANGE[1] - EPS_RANGE[0]) * s


def _tail(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _kernel(dist, eps):
    return dist**eps


def _solve_interpolant(A, P, y, tol=1e-12):
    # minimum-norm kernel weights: w lives in range(A^T Q), c absorbs range(P)
    n, q = P.shape
    Qfull, Rp = np.linalg.qr(P, mode="complete")
    if np.min(np.abs(np.diag(Rp[:q]))) <= tol * max(1.0, np.abs(Rp).max()):
        raise SurrogateError("polynomial tail is rank deficient; use mu > 0 or more points")
    Q = Qfull[:, q:]
    QA = Q.T @ A
    u, s, vt = np.linalg.svd(QA, full_matrices=False)
    if len(s) and s[-1] <= tol * s[0] * max(QA.shape):
        raise SurrogateError("interpolation system is rank deficient; use mu > 0")
    w = vt.T @ ((u.T @ (Q.T @ y)) / s)
    c = np.linalg.lstsq(P, y - A @ w, rcond=None)[0]
    return w, c


def _solve_regularized(A, P, y, mu):
    n, q = P.shape
    K = np.block([[A, P], [np.sqrt(mu) * np.eye(n), np.zeros((n, q))]])
    rhs = np.concatenate([y, np.zeros(n)])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def gcv_score(A, P, y, mu):
    """Generalized cross-validation score of the ridge fit with penalty ``mu``."""
    n, q = P.shape
    K = np.hstack([A, P])
    D = np.diag(np.concatenate([np.ones(n), np.zeros(q)]))
    H = K @ np.linalg.solve(K.T @ K + mu * D + 1e-14 * np.eye(n + q), K.T)
    r = y - H @ y
    denom = (n - np.trace(H)) ** 2
    return n * float(r @ r) / max(denom, 1e-300)


class SrbfModel:
    """Ensemble of power-kernel RBF fits over stochastic shape exponents.

    Parameters
    ----------
    data : TrainingSet
    mu : float
        Regularization weight relative to ``trace(A^T A) / n``; ``0`` gives
        exact interpolation. The string ``"gcv"`` selects it per exponent by
        generalized cross-validation.
    eps : array_like
        Kernel exponents, each in ``[1, 3]``.
    bounds : array_like, shape (N, 2), optional
        Box used to normalize inputs to the unit cube. Defaults to the
        training-data bounding box.
    """

    def __init__(self, data, mu=1e-8, eps=None, bounds=None):
        eps = epsilon_samples() if eps is None else np.atleast_1d(np.asarray(eps, dtype=float))
        if np.any(eps < EPS_RANGE[0]) or np.any(eps > EPS_RANGE[1]):
            raise SurrogateError("kernel exponents must lie in [1, 3]")
        n, dim = data.inputs.shape
        if n < dim + 2:
            raise SurrogateError(f"need at least {dim + 2} training points, got {n}")
        if bounds is None:
            lo, hi = data.inputs.min(axis=0), data.inputs.max(axis=0)
        else:
            bounds = np.asarray(bounds, dtype=float)
            lo, hi = bounds[:, 0], bounds[:, 1]
        self.lo = lo
        self.scale = np.where(hi > lo, hi - lo, 1.0)
        self.eps = eps
        self.mu = mu
        self.dim = dim
        self.fidelity = data.fidelity
        self.training_hash = data.digest()
        self.centers = self._normalize(data.inputs)
        dist = _pairwise(self.centers, self.centers)
        P = _tail(self.centers)
        y = data.outputs
        self.weights = np.empty((len(eps), n))
        self.tail = np.empty((len(eps), dim + 1))
        self.mu_abs = np.zeros(len(eps))
        for k, e in enumerate(eps):
            A = _kernel(dist, e)
            base = np.trace(A.T @ A) / n
            if mu == "gcv":
                grid = 10.0 ** np.arange(-12.0, 1.0)
                scores = [gcv_score(A, P, y, m * base) for m in grid]
                mu_k = grid[int(np.argmin(scores))] * base
            else:
                if mu < 0:
                    raise ValueError("mu must be >= 0")
                mu_k = mu * base
            self.mu_abs[k] = mu_k
            if mu_k == 0.0:
                w, c = _solve_interpolant(A, P, y)
            else:
                w, c = _solve_regularized(A, P, y, mu_k)
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(c))):
                raise SurrogateError(f"non-finite coefficients for eps={e:.4g}")
            self.weights[k] = w
            self.tail[k] = c

    def _normalize(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.lo) / self.scale

    def predict_ensemble(self, X, chunk=4096):
        """Per-exponent predictions, shape ``(n_eps, m)``."""
        Xn = self._normalize(X)
        out = np.empty((len(self.eps), len(Xn)))
        for s in range(0, len(Xn), chunk):
            xs = Xn[s : s + chunk]
            dist = _pairwise(xs, self.centers)
            with np.errstate(divide="ignore"):
                logd = np.log(dist)
            tail = self.tail @ _tail(xs).T
            for k, e in enumerate(self.eps):
                out[k, s : s + chunk] = np.exp(e * logd) @ self.weights[k] + tail[k]
        return out

    def predict(self, X):
        """Ensemble mean and uncertainty (twice the ensemble standard deviation)."""
        ens = self.predict_ensemble(X)
        return ens.mean(axis=0), 2.0 * ens.std(axis=0)

    def to_dict(self):
        return {
            "version": SURROGATE_VERSION,
            "lo": self.lo.tolist(),
            "scale": self.scale.tolist(),
            "eps": self.eps.tolist(),
            "mu": self.mu,
            "mu_abs": self.mu_abs.tolist(),
            "fidelity": self.fidelity,
            "training_hash": self.training_hash,
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "tail": self.tail.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != SURROGATE_VERSION:
            raise SurrogateError(f"unsupported surrogate version {d.get('version')!r}")
        m = cls.__new__(cls)
        m.lo = np.asarray(d["lo"], float)
        m.scale = np.asarray(d["scale"], float)
        m.eps = np.asarray(d["eps"], float)
        m.mu = d["mu"]
        m.mu_abs = np.asarray(d["mu_abs"], float)
        m.fidelity = d["fidelity"]
        m.training_hash = d["training_hash"]
        m.centers = np.asarray(d["centers"], float).reshape(-1, len(m.lo))
        m.dim = len(m.lo)
        m.weights = np.asarray(d["weights"], float).reshape(len(m.eps), -1)
        m.tail = np.asarray(d["tail"], float).reshape(len(m.eps), -1)
        return m


def train_srbf(data, mu=1e-8, eps=None, bounds=None):
    return SrbfModel(data, mu, eps, bounds)


class ConstantModel:
    """Constant fallback used when too few points exist for an RBF fit."""

    def __init__(self, value=0.0, uncertainty=0.0):
        self.value = float(value)
        self.uncertainty = float(uncertainty)

    def predict(self, X):
        m = np.atleast_2d(X).shape[0]
        return np.full(m, self.value), np.full(m, self.uncertainty)

    def to_dict(self):
        return {"constant": self.value, "uncertainty": self.uncertainty}


def combine_uncertainty(u_lf, u_disc):
    """Uncorrelated combination ``sqrt(U1^2 + Ueps^2)``."""
    return np.hypot(u_lf, u_disc)


class MfSurrogate:
    """Low-fidelity ensemble plus a discrepancy ensemble on high-fidelity residuals."""

    def __init__(self, lf_model, discrepancy_model, hf_empty=False):
        self.lf_model = lf_model
        self.discrepancy_model = discrepancy_model
        self.hf_empty = hf_empty

    def predict_lf(self, X):
        return self.lf_model.predict(X)

    def predict(self, X):
        m1, u1 = self.lf_model.predict(X)
        md, ud = self.discrepancy_model.predict(X)
        return m1 + md, combine_uncertainty(u1, ud)

    def predict_components(self, X):
        """``(mean, U_lf, U_disc)``."""
        m1, u1 = self.lf_model.predict(X)
        md, ud = self.discrepancy_model.predict(X)
        return m1 + md, u1, ud

    def to_dict(self):
        disc = self.discrepancy_model
        return {
            "version": SURROGATE_VERSION,
            "lf": self.lf_model.to_dict(),
            "discrepancy": disc.to_dict(),
            "hf_empty": self.hf_empty,
        }

    @classmethod
    def from_dict(cls, d):
        disc = d["discrepancy"]
        disc_model = ConstantModel(disc["constant"], disc["uncertainty"]) if "constant" in disc else SrbfModel.from_dict(disc)
        return cls(SrbfModel.from_dict(d["lf"]), disc_model, d["hf_empty"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class LogSurrogate:
    """Two-fidelity surrogate fitted to ``log(y)`` for strictly positive outputs.

    Means map back through ``exp``; uncertainties through its first-order
    expansion ``exp(m) * U``, which keeps the uncorrelated-combination rule
    intact because both components scale by the same factor.
    """

    def __init__(self, model):
        self.model = model

    @property
    def hf_empty(self):
        return self.model.hf_empty

    def predict_lf(self, X):
        m, u = self.model.predict_lf(X)
        e = np.exp(m)
        return e, e * u

    def predict(self, X):
        m, u = self.model.predict(X)
        e = np.exp(m)
        return e, e * u

    def predict_components(self, X):
        m, u1, ud = self.model.predict_components(X)
        e = np.exp(m)
        return e, e * u1, e * ud

    def to_dict(self):
        return {"transform": "log", **self.model.to_dict()}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def surrogate_from_dict(d):
    """Rebuild an :class:`MfSurrogate` or :class:`LogSurrogate` from its dict."""
    if d.get("transform") == "log":
        return LogSurrogate(MfSurrogate.from_dict(d))
    return MfSurrogate.from_dict(d)


def load_surrogate(path):
    with open(path) as fh:
        return surrogate_from_dict(json.load(fh))


def train_mf(lf_data, hf_data, mu=1e-8, eps=None, bounds=None):
    """Two-fidelity surrogate: LF ensemble plus discrepancy on HF residuals.

    With no HF data the discrepancy is identically zero (``hf_empty`` set);
    with fewer HF points than an RBF fit needs it falls back to a constant
    offset whose uncertainty is twice the residual standard deviation.
    """
    lf_model = SrbfModel(lf_data, mu, eps, bounds)
    if hf_data is None or len(hf_data) == 0:
        return MfSurrogate(lf_model, ConstantModel(0.0, 0.0), hf_empty=True)
    lf_at_hf, _ = lf_model.predict(hf_data.inputs)
    resid = TrainingSet(hf_data.inputs, hf_data.outputs - lf_at_hf, fidelity=2)
    if len(resid) < resid.inputs.shape[1] + 2:
        r = resid.outputs
        return MfSurrogate(lf_model, ConstantModel(r.mean(), 2.0 * r.std()))
    return MfSurrogate(lf_model, SrbfModel(resid, mu, eps, bounds))


def train_mf_log(lf_data, hf_data, mu=1e-8, eps=None, bounds=None):
    """:func:`train_mf` on ``log`` outputs; all outputs must be positive."""
    sets = [d for d in (lf_data, hf_data) if d is not None]
    if any(np.any(d.outputs <= 0) for d in sets):
        raise SurrogateError("log-transformed surrogate needs strictly positive outputs")
    log_lf = TrainingSet(lf_data.inputs, np.log(lf_data.outputs), lf_data.fidelity)
    log_hf = None if hf_data is None else TrainingSet(hf_data.inputs, np.log(hf_data.outputs), hf_data.fidelity)
    return LogSurrogate(train_mf(log_lf, log_hf, mu, eps, bounds))


def predict_mf(mf, X):
    return mf.predict(X)
