"""Physics-driven parametric model embedding.

Sampled designs are stacked with their distributed and lumped physical
responses into one centered data matrix. The physical rows are weighted by
inverse empirical variance and the geometric rows get zero weight, so the
leading modes are the geometric directions that explain physical variance.
"""

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

EMBEDDING_VERSION = 1


class ReductionError(ValueError):
    pass


@dataclass
class EnsembleRecord:
    u: np.ndarray
    f: np.ndarray
    c: np.ndarray
    ok: bool = True


@dataclass
class Ensemble:
    """Row-per-design arrays: geometry ``U``, fields ``F`` and lumped outputs ``C``."""

    U: np.ndarray
    F: np.ndarray
    C: np.ndarray
    ok: np.ndarray = None
    index: np.ndarray = None

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        s = self.U.shape[0]
        self.F = np.asarray(self.F, dtype=float).reshape(s, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(s, -1)
        self.ok = np.ones(s, bool) if self.ok is None else np.asarray(self.ok, bool)
        self.index = np.arange(s) if self.index is None else np.asarray(self.index, int)
        if not (len(self.ok) == len(self.index) == s):
            raise ValueError("inconsistent ensemble lengths")

    def __len__(self):
        return self.U.shape[0]

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            raise ReductionError("empty ensemble")
        n_f = {np.size(r.f) for r in records}
        if len(n_f) != 1:
            raise ReductionError("inconsistent field length across the ensemble")
        return cls(
            np.array([r.u for r in records]),
            np.array([np.ravel(r.f) for r in records]),
            np.array([np.ravel(r.c) for r in records]),
            np.array([r.ok for r in records]),
        )

    def subset(self, mask):
        return Ensemble(self.U[mask], self.F[mask], self.C[mask], self.ok[mask], self.index[mask])

    def digest(self):
        h = hashlib.sha256()
        for a in (self.U, self.F, self.C):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def iqr_fence(values, factor=3.0):
    q1, q3 = np.percentile(values, [25.0, 75.0])
    iqr = q3 - q1
    return q1 - factor * iqr, q3 + factor * iqr


def filter_mask(ensemble, factor=3.0):
    """Keep-mask: finite successful records whose lumped outputs are inside the fences."""
    finite = (
        ensemble.ok
        & np.all(np.isfinite(ensemble.U), axis=1)
        & np.all(np.isfinite(ensemble.F), axis=1)
        & np.all(np.isfinite(ensemble.C), axis=1)
    )
    keep = finite.copy()
    if not finite.any():
        return keep
    for col in ensemble.C[finite].T:
        lo, hi = iqr_fence(col, factor)
        inside = np.zeros(len(ensemble), bool)
        inside[finite] = (col >= lo) & (col <= hi)
        keep &= inside
    return keep


def filter_ensemble(ensemble, factor=3.0):
    """Drop failed or non-finite records, then lumped-output outliers.

    Fences are ``[Q1 - factor*IQR, Q3 + factor*IQR]`` per lumped output,
    inclusive, so all-identical data survive.
    """
    if len(ensemble) == 0:
        raise ReductionError("empty ensemble")
    mask = filter_mask(ensemble, factor)
    if not mask.any():
        raise ReductionError("no records left after filtering")
    return ensemble.subset(mask)


@dataclass
class DataMatrix:
    """Centered physics-augmented matrix with one column per design."""

    P: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    n_geom: int
    n_field: int
    n_lumped: int

    @property
    def n_samples(self):
        return self.P.shape[1]


def assemble_matrix(ensemble, min_extra=2):
    """Stack ``[U; F; C]`` column-wise, center each row and build the weights.

    Geometry rows get weight 0; each physical row gets its inverse empirical
    variance, or 0 when the row is constant.
    """
    n_geom = ensemble.U.shape[1]
    if len(ensemble) < n_geom + min_extra:
        raise ReductionError(f"need at least {n_geom + min_extra} designs, got {len(ensemble)}")
    raw = np.hstack([ensemble.U, ensemble.F, ensemble.C]).T
    mean = raw.mean(axis=1)
    P = raw - mean[:, None]
    var = np.mean(P * P, axis=1)
    phys = np.arange(P.shape[0]) >= n_geom
    # rows whose spread is at round-off level carry no information
    scale = np.maximum(np.abs(mean), 1.0)
    live = phys & (var > (1e-13 * scale) ** 2)
    weights = np.zeros(P.shape[0])
    weights[live] = 1.0 / var[live]
    if not live.any():
        raise ReductionError("every physical row has zero variance; nothing to embed")
    return DataMatrix(P, weights, mean, n_geom, ensemble.F.shape[1], ensemble.C.shape[1])


@dataclass
class Embedding:
    mean_u: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    x_bounds: np.ndarray
    eta_retained: float
    eta: float
    spectrum: np.ndarray
    u_lower: np.ndarray = None
    u_upper: np.ndarray = None
    ensemble_hash: str = ""
    n_samples: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self):
        return self.basis.shape[1]

    def retention_curve(self):
        total = self.spectrum.sum()
        return np.cumsum(self.spectrum) / total

    def to_dict(self):
        return {
            "version": EMBEDDING_VERSION,
            "mean_u": self.mean_u.tolist(),
            "basis": self.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "x_bounds": None if self.x_bounds is None else self.x_bounds.tolist(),
            "eta_retained": self.eta_retained,
            "eta": self.eta,
            "spectrum": self.spectrum.tolist(),
            "u_lower": None if self.u_lower is None else self.u_lower.tolist(),
            "u_upper": None if self.u_upper is None else self.u_upper.tolist(),
            "ensemble_hash": self.ensemble_hash,
            "n_samples": self.n_samples,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != EMBEDDING_VERSION:
            raise ReductionError(f"unsupported embedding version {d.get('version')!r}")
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(
            arr("mean_u"),
            np.asarray(d["basis"], dtype=float).reshape(len(d["mean_u"]), -1),
            arr("eigenvalues"),
            arr("x_bounds"),
            d["eta_retained"],
            d["eta"],
            arr("spectrum"),
            arr("u_lower"),
            arr("u_upper"),
            d.get("ensemble_hash", ""),
            d.get("n_samples", 0),
            d.get("meta", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve_embedding(data, eta=0.95, rank_tol=1e-12):
    """Weighted covariance eigenproblem ``A W z = lambda z`` with ``A = P P^T / S``.

    Solved through the SVD of ``W^{1/2} P / sqrt(S)``: its squared singular
    values are the eigenvalues of the symmetric ``W^{1/2} A W^{1/2}``, and
    ``z_k = A W^{1/2} q_k`` is proportional to ``P`` times the k-th right
    singular vector. The geometry block of ``z_k`` is the k-th mode.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    S = data.n_samples
    X = np.sqrt(data.weights)[:, None] * data.P / np.sqrt(S)
    try:
        _, sigma, vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ReductionError(
            f"SVD failed for a {X.shape[0]}x{X.shape[1]} matrix, "
            f"max |entry| {np.abs(X).max():.3g}, weight range [{data.weights.min():.3g}, {data.weights.max():.3g}]"
        ) from exc
    lam = sigma**2
    rank = int(np.sum(sigma > rank_tol * sigma[0])) if sigma.size and sigma[0] > 0 else 0
    if rank == 0:
        raise ReductionError("weighted covariance is identically zero")
    lam = lam[:rank]
    ratio = np.cumsum(lam) / lam.sum()
    n = int(np.searchsorted(ratio, eta - 1e-12) + 1)
    n = min(n, rank)
    Z = data.P[: data.n_geom] @ vt[:n].T
    norms = np.linalg.norm(Z, axis=0)
    if np.any(norms == 0):
        raise ReductionError("selected mode has an empty geometry block")
    basis = Z / norms
    return Embedding(
        mean_u=data.mean[: data.n_geom].copy(),
        basis=basis,
        eigenvalues=lam[:n].copy(),
        x_bounds=None,
        eta_retained=float(ratio[n - 1]),
        eta=float(eta),
        spectrum=lam.copy(),
        n_samples=S,
    )


def project(embedding, u):
    """Reduced coordinates of designs ``u`` (least-squares inverse of :func:`back_map`)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x = np.linalg.lstsq(embedding.basis, (u - embedding.mean_u).T, rcond=None)[0].T
    return x


def reduced_bounds(embedding, U, expand=0.05):
    """Projection box of the training designs, widened by ``expand`` of its range."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if len(U) < 2:
        raise ReductionError("reduced bounds need at least two designs")
    x = project(embedding, U)
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = hi - lo
    if np.any(width <= 0):
        raise ReductionError("degenerate reduced bounds (zero projection range)")
    mid = 0.5 * (lo + hi)
    half = 0.5 * width * (1.0 + expand)
    return np.column_stack([mid - half, mid + half])


def back_map(embedding, x, clamp=True):
    """Design vector ``mean_u + V x``.

    With ``clamp`` the reduced point is first clipped to ``x_bounds`` (with a
    warning) and the result is clipped to the design box.
    """
    x = np.asarray(x, dtype=float)
    if clamp and embedding.x_bounds is not None:
        lo, hi = embedding.x_bounds[:, 0], embedding.x_bounds[:, 1]
        if np.any((x < lo) | (x > hi)):
            warnings.warn("reduced coordinates outside x_bounds were clamped", stacklevel=2)
            x = np.clip(x, lo, hi)
    u = embedding.mean_u + x @ embedding.basis.T
    if clamp and embedding.u_lower is not None:
        u = np.clip(u, embedding.u_lower, embedding.u_upper)
    return u


def build_embedding(ensemble, eta=0.95, u_lower=None, u_upper=None, fence=3.0, expand=0.05):
    """Filter, assemble, solve and bound in one call."""
    kept = filter_ensemble(ensemble, fence)
    data = assemble_matrix(kept)
    emb = solve_embedding(data, eta)
    emb.x_bounds = reduced_bounds(emb, kept.U, expand)
    emb.u_lower = None if u_lower is None else np.asarray(u_lower, float)
    emb.u_upper = None if u_upper is None else np.asarray(u_upper, float)
    emb.ensemble_hash = kept.digest()
    emb.meta = {"n_total": len(ensemble), "n_kept": len(kept)}
    return emb


def write_ensemble_csv(ensemble, path, u_names=None, meta=None):
    """Ensemble as CSV; the first line is a ``#``-comment with block sizes and ``meta``."""
    n_u, n_f, n_c = ensemble.U.shape[1], ensemble.F.shape[1], ensemble.C.shape[1]
    u_names = list(u_names or [f"u{k}" for k in range(n_u)])
    c_names = ["L", "D"] if n_c == 2 else [f"c{k}" for k in range(n_c)]
    info = {"n_u": n_u, "n_f": n_f, "n_c": n_c, **(meta or {})}
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(info, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["index", "ok"] + u_names + [f"f{k}" for k in range(n_f)] + c_names)
        for i in range(len(ensemble)):
            row = [int(ensemble.index[i]), int(ensemble.ok[i])]
            row += [repr(float(v)) for v in np.concatenate([ensemble.U[i], ensemble.F[i], ensemble.C[i]])]
            w.writerow(row)


def read_ensemble_csv(path):
    """Inverse of :func:`write_ensemble_csv`; returns ``(ensemble, meta)``."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ReductionError(f"{path}: missing ensemble metadata line")
        info = json.loads(first[2:])
        rows = list(csv.reader(fh))
    n_u, n_f = info["n_u"], info["n_f"]
    width = len(rows[0])
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, width)
    U = data[:, 2 : 2 + n_u]
    F = data[:, 2 + n_u : 2 + n_u + n_f]
    C = data[:, 2 + n_u + n_f :]
    return Ensemble(U, F, C, data[:, 1].astype(bool), data[:, 0].astype(int)), info
