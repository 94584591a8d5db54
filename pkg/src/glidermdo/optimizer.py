"""Batch bi-objective Bayesian optimization with adaptive fidelity.

Objectives are minimized. The loop scans the reduced box with the surrogate
means to get a predicted Pareto front, clusters it in the joint
``[x, f(x)]`` space, picks the highest-EHVI member of each cluster and runs
each pick at the fidelity with the best uncertainty-to-cost ratio.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from . import kernels
from .surrogate import TrainingSet, train_mf, train_mf_log


class OptimizerError(RuntimeError):
    pass


# ---------------------------------------------------------------- dominance


def dominates(f1, f2):
    """Pareto dominance for minimization."""
    f1, f2 = np.asarray(f1, dtype=float), np.asarray(f2, dtype=float)
    return bool(np.all(f1 <= f2) and np.any(f1 < f2))


def nondominated_mask(F):
    """Mask of the non-dominated rows of a 2-objective set; duplicates keep the first."""
    F = np.asarray(F, dtype=float).reshape(-1, 2)
    order = np.lexsort((F[:, 1], F[:, 0]))
    keep = np.zeros(len(F), bool)
    best = np.inf
    for i in order:
        if F[i, 1] < best:
            keep[i] = True
            best = F[i, 1]
    return keep


def pareto_front(F):
    """Non-dominated points sorted by the first objective."""
    F = np.asarray(F, dtype=float).reshape(-1, 2)
    front = F[nondominated_mask(F)]
    return front[np.argsort(front[:, 0], kind="stable")]


def hypervolume(front, ref):
    """Exact 2-D dominated area bounded by ``ref``."""
    F = np.asarray(front, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref, dtype=float)
    if len(F) == 0:
        return 0.0
    if np.any(F >= ref):
        raise OptimizerError("every front point must strictly dominate the reference point")
    P = pareto_front(F)
    widths = np.diff(np.append(P[:, 0], ref[0]))
    return float(np.sum(widths * (ref[1] - P[:, 1])))


def hv_improvement(front, ref, Y):
    """Hypervolume gained by adding each row of ``Y`` to ``front``."""
    F = np.asarray(front, dtype=float).reshape(-1, 2)
    if len(F):
        F = pareto_front(F[np.all(F < ref, axis=1)])
    return kernels.hvi_batch(np.ascontiguousarray(F), np.asarray(ref, dtype=float), np.atleast_2d(Y))


# ---------------------------------------------------------------- EHVI

_NORMAL_CACHE = {}


def normal_samples(n, seed=0):
    """Deterministic scrambled-Sobol standard-normal pairs, shape ``(n, 2)``."""
    key = (n, seed)
    if key not in _NORMAL_CACHE:
        m = int(np.ceil(np.log2(max(n, 2))))
        u = qmc.Sobol(2, scramble=True, seed=seed).random_base2(m)[:n]
        _NORMAL_CACHE[key] = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return _NORMAL_CACHE[key]


def ehvi_mc(mean, sigma, front, ref, n_samples=4096, seed=0):
    """Quasi-Monte-Carlo EHVI of a Gaussian candidate with diagonal covariance."""
    mean = np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    if not np.any(sigma > 0):
        return float(hv_improvement(front, ref, mean[None, :])[0])
    Y = mean + sigma * normal_samples(n_samples, seed)
    return float(np.mean(hv_improvement(front, ref, Y)))


def _partial_expectation(c, mu, sd):
    # E[(c - Y)^+] for Y ~ N(mu, sd^2), elementwise; c may be -inf
    c = np.asarray(c, dtype=float)
    out = np.zeros(np.broadcast(c, mu, sd).shape)
    c, mu, sd = np.broadcast_arrays(c, mu, sd)
    det = sd == 0
    fin = np.isfinite(c)
    m = det & fin
    out[m] = np.maximum(c[m] - mu[m], 0.0)
    m = ~det & fin
    z = (c[m] - mu[m]) / sd[m]
    out[m] = (c[m] - mu[m]) * norm.cdf(z) + sd[m] * norm.pdf(z)
    return out


def ehvi_analytic(mean, sigma, front, ref):
    """Closed-form 2-D EHVI for independent Gaussian objectives.

    The improvement decomposes into vertical strips ``[a_k, b_k)`` with
    ceiling ``h_k``; each strip contributes
    ``E[(b_k - max(Y1, a_k))^+] * E[(h_k - Y2)^+]``.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    F = np.asarray(front, dtype=float).reshape(-1, 2)
    ref = np.asarray(ref, dtype=float)
    F = pareto_front(F[np.all(F < ref, axis=1)]) if len(F) else F
    a = np.concatenate([[-np.inf], F[:, 0]])
    b = np.concatenate([F[:, 0], [ref[0]]])
    h = np.concatenate([[ref[1]], F[:, 1]])
    mu1, sd1 = mean[:, 0:1], sigma[:, 0:1]
    mu2, sd2 = mean[:, 1:2], sigma[:, 1:2]
    width = _partial_expectation(b[None, :], mu1, sd1) - _partial_expectation(a[None, :], mu1, sd1)
    height = _partial_expectation(h[None, :], mu2, sd2)
    out = np.sum(width * height, axis=1)
    return float(out[0]) if out.size == 1 else out


def ehvi(mean, sigma, front, ref, mc_samples=4096, method="mc", seed=0):
    if method == "analytic":
        return ehvi_analytic(mean, sigma, front, ref)
    return ehvi_mc(mean, sigma, front, ref, mc_samples, seed)


# ---------------------------------------------------------------- batch selection


@dataclass
class ParetoCandidates:
    X: np.ndarray
    F: np.ndarray
    U: np.ndarray
    U_lf: np.ndarray

    def __len__(self):
        return len(self.X)


def sobol_box(bounds, n, seed):
    bounds = np.asarray(bounds, dtype=float)
    m = int(np.ceil(np.log2(max(n, 2))))
    z = qmc.Sobol(len(bounds), scramble=True, seed=seed).random_base2(m)[:n]
    return bounds[:, 0] + z * (bounds[:, 1] - bounds[:, 0])


def predicted_pareto(surrogates, bounds, scan=2**14, seed=0, exclude=None, tol=1e-9):
    """Non-dominated set of a low-discrepancy scan scored by surrogate means."""
    X = sobol_box(bounds, scan, seed)
    if exclude is not None and len(exclude):
        d, _ = cKDTree(np.asarray(exclude, dtype=float)).query(X, p=np.inf)
        X = X[d > tol]
    F = np.empty((len(X), 2))
    U = np.empty((len(X), 2))
    U_lf = np.empty((len(X), 2))
    for m, s in enumerate(surrogates):
        mean, u1, ud = s.predict_components(X)
        F[:, m] = mean
        U[:, m] = np.hypot(u1, ud)
        U_lf[:, m] = u1
    keep = np.all(np.isfinite(F), axis=1)
    X, F, U, U_lf = X[keep], F[keep], U[keep], U_lf[keep]
    if len(X) == 0:
        raise OptimizerError("predicted Pareto scan produced no finite points")
    nd = nondominated_mask(F)
    order = np.argsort(F[nd, 0], kind="stable")
    return ParetoCandidates(X[nd][order], F[nd][order], U[nd][order], U_lf[nd][order])


def _unit_features(X, F):
    Z = np.hstack([X, F])
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    span = hi - lo
    return np.where(span > 0, (Z - lo) / np.where(span > 0, span, 1.0), 0.0)


def _kmeans(Z, k, seed):
    # low-discrepancy seeds snapped to distinct data points
    m = int(np.ceil(np.log2(max(k, 2))))
    probes = qmc.Sobol(Z.shape[1], scramble=True, seed=seed).random_base2(m)[:k]
    chosen = []
    for p in probes:
        d = np.sum((Z - p) ** 2, axis=1)
        d[chosen] = np.inf
        chosen.append(int(np.argmin(d)))
    km = KMeans(n_clusters=k, init=Z[chosen], n_init=1, max_iter=100, random_state=seed)
    return km.fit_predict(Z)


def cluster_batch(X, F, k_max=8, seed=0):
    """k-means in the normalized ``[x, f]`` space with silhouette-selected k.

    Returns ``(labels, k, scores)``; ``scores`` maps each tried k to its mean
    silhouette. Fronts too small or degenerate for k >= 2 give one cluster.
    """
    X = np.atleast_2d(X)
    n = len(X)
    Z = _unit_features(X, np.atleast_2d(F))
    n_distinct = len(np.unique(np.round(Z, 12), axis=0))
    ks = range(2, min(k_max, n - 1, n_distinct) + 1)
    best_k, best_s, best_labels, scores = 1, -np.inf, np.zeros(n, int), {}
    for k in ks:
        labels = _kmeans(Z, k, seed)
        if len(np.unique(labels)) < 2:
            continue
        s = float(silhouette_score(Z, labels))
        scores[k] = s
        if s > best_s:  # strict: ties keep the smaller k
            best_k, best_s, best_labels = k, s, labels
    if best_k > 1:
        # relabel in order of first appearance for reproducible output
        _, first = np.unique(best_labels, return_index=True)
        remap = {old: new for new, old in enumerate(best_labels[np.sort(first)])}
        best_labels = np.array([remap[v] for v in best_labels])
    return best_labels, best_k, scores


def select_infill(candidates, labels, archive_front, ref, mc_samples=4096, seed=0):
    """Max-EHVI member per cluster; ties to larger uncertainty, then lexicographic x.

    Uncertainties ``U`` are two-sigma bands, so the Gaussian uses ``U / 2``.
    Returns ``(indices, ehvi_values)``.
    """
    picks, values = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        ev = np.array(
            [ehvi_mc(candidates.F[i], candidates.U[i] / 2.0, archive_front, ref, mc_samples, seed) for i in idx]
        )
        unc = np.linalg.norm(candidates.U[idx], axis=1)
        x = candidates.X[idx]
        # lexsort: last key primary; minimize -ehvi, -unc, then x lexicographically
        keys = [x[:, j] for j in range(x.shape[1] - 1, -1, -1)] + [-unc, -ev]
        best = idx[np.lexsort(keys)[0]]
        picks.append(int(best))
        values.append(float(ev[np.flatnonzero(idx == best)[0]]))
    return picks, values


def allocate_fidelity(u_lf, u_hf, costs=(1.0, 10.0)):
    """Level maximizing aggregated uncertainty over cost; ties go to level 1."""
    if min(costs) <= 0:
        raise ValueError("costs must be > 0")
    r1 = float(np.linalg.norm(u_lf)) / costs[0]
    r2 = float(np.linalg.norm(u_hf)) / costs[1]
    return 2 if r2 > r1 else 1


# ---------------------------------------------------------------- loop


@dataclass
class EvalResult:
    f: np.ndarray
    ok: bool = True
    cost: float = 0.0
    info: dict = field(default_factory=dict)


@dataclass
class LoopConfig:
    n_lf: int = 128
    n_hf: int = 32
    max_iterations: int = 6
    max_cost: float = np.inf
    stop_uncertainty: float = 0.03
    stop_hv_gain: float = 1e-3
    stop_window: int = 2
    scan: int = 2**14
    mc_samples: int = 4096
    k_max: int = 8
    seed: int = 0
    mu: float = 1e-8
    n_eps: int = 16
    cost_mode: str = "static"
    static_costs: tuple = (1.0, 10.0)
    ref_margin: float = 0.1
    log_objectives: tuple = (False, False)

    def __post_init__(self):
        if not 0 < self.n_hf <= self.n_lf:
            raise ValueError("need 0 < n_hf <= n_lf (HF design nested in LF design)")
        if self.cost_mode not in ("static", "measured"):
            raise ValueError("cost_mode must be 'static' or 'measured'")


@dataclass
class ParetoArchive:
    points: np.ndarray
    X: np.ndarray
    ref: np.ndarray
    hypervolume: float
    iteration: int


@dataclass
class LoopState:
    X: dict = field(default_factory=lambda: {1: [], 2: []})
    F: dict = field(default_factory=lambda: {1: [], 2: []})
    costs: dict = field(default_factory=lambda: {1: [], 2: []})
    failures: list = field(default_factory=list)
    surrogates: list = None
    iteration: int = 0
    ledger: list = field(default_factory=list)
    hv_history: list = field(default_factory=list)
    uncertainty_history: list = field(default_factory=list)
    pareto_tables: list = field(default_factory=list)
    stop_reason: str = ""
    ref: np.ndarray = None
    final_uncertainty: float = None

    def counts(self):
        return {lev: len(self.F[lev]) + sum(1 for f in self.failures if f["fidelity"] == lev) for lev in (1, 2)}

    def evaluated(self):
        """Objective pair per evaluated design at its highest fidelity, plus designs."""
        pts = {}
        for lev in (1, 2):
            for x, f in zip(self.X[lev], self.F[lev]):
                pts[tuple(np.round(x, 12))] = (x, f)
        X = np.array([v[0] for v in pts.values()])
        F = np.array([v[1] for v in pts.values()])
        return X, F


def train_surrogates(state, bounds, cfg):
    """Per-objective two-fidelity surrogates fitted to the archives in ``state``."""
    eps = None
    if cfg.n_eps:
        from .surrogate import epsilon_samples

        eps = epsilon_samples(cfg.n_eps, cfg.seed)
    models = []
    X1 = np.array(state.X[1])
    X2 = np.array(state.X[2]) if state.X[2] else np.empty((0, X1.shape[1]))
    F1 = np.array(state.F[1])
    F2 = np.array(state.F[2]) if state.F[2] else np.empty((0, 2))
    for m in range(2):
        lf = TrainingSet(X1, F1[:, m], 1)
        hf = TrainingSet(X2, F2[:, m], 2)
        fit = train_mf_log if cfg.log_objectives[m] else train_mf
        models.append(fit(lf, hf, cfg.mu, eps, bounds))
    return models


def _costs(state, cfg):
    if cfg.cost_mode == "static" or not (state.costs[1] and state.costs[2]):
        return tuple(cfg.static_costs)
    return (float(np.median(state.costs[1])), float(np.median(state.costs[2])))


def normalized_pareto_uncertainty(candidates):
    """Largest predicted-front uncertainty relative to the front's range, per objective."""
    rng = np.ptp(candidates.F, axis=0)
    rng = np.where(rng > 0, rng, 1.0)
    return float(np.max(candidates.U / rng)) if len(candidates) else 0.0


def initial_design(bounds, config):
    """Nested Sobol designs: the HF set is the first ``n_hf`` LF points."""
    X_lf = sobol_box(np.asarray(bounds, dtype=float), config.n_lf, config.seed)
    return X_lf, X_lf[: config.n_hf]


def run_loop(problem, config=None, out_dir=None, log=None, initial=None, meta=None):
    """Active-learning loop over ``problem``.

    ``problem`` needs ``bounds`` (``(N, 2)`` array) and
    ``evaluate(x, fidelity) -> EvalResult``; an optional
    ``evaluate_batch(xs, fidelities) -> list[EvalResult]`` is used for each
    infill batch when present. Returns ``(history, state)`` where
    ``history`` lists the evaluated-archive :class:`ParetoArchive` per
    iteration (iteration 0 is the initial design). ``initial`` may carry an
    already evaluated initial design as a :class:`LoopState`; its archives,
    costs and failures are copied instead of re-evaluating. ``meta`` is
    written as a leading ``#`` comment line into every output table.
    """
    cfg = config or LoopConfig()
    bounds = np.asarray(problem.bounds, dtype=float)
    log = log or (lambda msg: None)
    state = LoopState()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    def store(x, lev, iteration, res, cost):
        if res.ok and np.all(np.isfinite(res.f)):
            state.X[lev].append(np.asarray(x, dtype=float))
            state.F[lev].append(np.asarray(res.f, dtype=float))
            state.costs[lev].append(cost)
        else:
            state.failures.append({"iteration": iteration, "fidelity": lev, "x": list(map(float, x)), **res.info})

    def run(x, lev, iteration):
        t0 = time.perf_counter()
        try:
            res = problem.evaluate(x, lev)
        except Exception as exc:  # evaluator failures are logged and skipped
            res = EvalResult(np.full(2, np.nan), ok=False, info={"error": repr(exc)})
        store(x, lev, iteration, res, res.cost if res.cost else time.perf_counter() - t0)

    def run_batch(xs, levels, iteration):
        batch = getattr(problem, "evaluate_batch", None)
        if batch is None:
            for x, lev in zip(xs, levels):
                run(x, lev, iteration)
            return
        for x, lev, res in zip(xs, levels, batch(xs, levels)):
            store(x, lev, iteration, res, res.cost)

    if initial is None:
        X_lf, X_hf = initial_design(bounds, cfg)
        run_batch(list(X_lf) + list(X_hf), [1] * len(X_lf) + [2] * len(X_hf), 0)
    else:
        for lev in (1, 2):
            state.X[lev] = [np.asarray(x, dtype=float) for x in initial.X[lev]]
            state.F[lev] = [np.asarray(f, dtype=float) for f in initial.F[lev]]
            state.costs[lev] = list(initial.costs[lev])
        state.failures = list(initial.failures)
    if len(state.F[1]) < bounds.shape[0] + 2:
        raise OptimizerError("too few successful low-fidelity evaluations to train surrogates")

    _, F0 = state.evaluated()
    lo, hi = F0.min(axis=0), F0.max(axis=0)
    state.ref = hi + cfg.ref_margin * np.where(hi > lo, hi - lo, 1.0)
    history = []

    def record(iteration):
        Xe, Fe = state.evaluated()
        inside = np.all(Fe < state.ref, axis=1)
        mask = np.zeros(len(Fe), bool)
        mask[np.flatnonzero(inside)[nondominated_mask(Fe[inside])]] = True
        hv = hypervolume(Fe[mask], state.ref) if mask.any() else 0.0
        order = np.argsort(Fe[mask, 0], kind="stable")
        history.append(ParetoArchive(Fe[mask][order], Xe[mask][order], state.ref.copy(), hv, iteration))
        state.hv_history.append(hv)
        c = state.counts()
        tot = {lev: float(np.sum(state.costs[lev])) for lev in (1, 2)}
        state.ledger.append({"iteration": iteration, "n_lf": c[1], "n_hf": c[2], "cost_lf": tot[1], "cost_hf": tot[2]})

    record(0)
    state.surrogates = train_surrogates(state, bounds, cfg)
    for t in range(1, cfg.max_iterations + 1):
        state.iteration = t
        Xe, _ = state.evaluated()
        cand = predicted_pareto(state.surrogates, bounds, cfg.scan, cfg.seed + t, exclude=Xe)
        unc = normalized_pareto_uncertainty(cand)
        state.uncertainty_history.append(unc)
        front = history[-1].points
        labels, k, _ = cluster_batch(cand.X, cand.F, cfg.k_max, cfg.seed + t)
        picks, evs = select_infill(cand, labels, front, state.ref, cfg.mc_samples, cfg.seed)
        costs = _costs(state, cfg)
        levels = [allocate_fidelity(cand.U_lf[i], cand.U[i], costs) for i in picks]
        state.pareto_tables.append((t, cand, labels, dict(zip(picks, levels))))
        log(f"iter {t}: front {len(cand)}, k={k}, max norm. uncertainty {unc:.4f}, fidelities {levels}")
        if out:
            write_pareto_table(out / f"pareto_iter_{t}.csv", cand, labels, dict(zip(picks, levels)), meta)
        if unc < cfg.stop_uncertainty:
            state.stop_reason = "uncertainty"
            break
        run_batch([cand.X[i] for i in picks], levels, t)
        record(t)
        state.surrogates = train_surrogates(state, bounds, cfg)
        w = cfg.stop_window
        if len(state.hv_history) > w:
            old = state.hv_history[-1 - w]
            gain = (state.hv_history[-1] - old) / old if old > 0 else np.inf
            if gain < cfg.stop_hv_gain:
                state.stop_reason = "hv_stagnation"
                break
        spent = sum(np.sum(state.costs[lev]) for lev in (1, 2))
        if spent >= cfg.max_cost:
            state.stop_reason = "budget"
            break
    else:
        state.stop_reason = "max_iterations"
    if state.stop_reason == "uncertainty":
        state.final_uncertainty = state.uncertainty_history[-1]
    else:
        Xe, _ = state.evaluated()
        final = predicted_pareto(state.surrogates, bounds, cfg.scan, cfg.seed + state.iteration + 1, exclude=Xe)
        state.final_uncertainty = normalized_pareto_uncertainty(final)
    log(f"stop: {state.stop_reason}; final max norm. uncertainty {state.final_uncertainty:.4f}")
    if out:
        write_hv_history(out / "hv_history.csv", state, meta)
        write_budget(out / "budget.csv", state, meta)
    return history, state


# ---------------------------------------------------------------- outputs


def write_meta_line(fh, meta):
    """Leading ``# {json}`` comment line carrying artifact metadata."""
    if meta:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")


def read_meta_line(path):
    """Metadata dict of a table written with :func:`write_meta_line` (empty if none)."""
    with open(path) as fh:
        first = fh.readline()
    return json.loads(first[2:]) if first.startswith("# ") else {}


def write_pareto_table(path, cand, labels, allocation, meta=None):
    """Predicted front with uncertainty-ellipse axes, cluster and allocated fidelity."""
    n_x = cand.X.shape[1]
    with open(path, "w", newline="") as fh:
        write_meta_line(fh, meta)
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(n_x)] + ["f1", "f2", "sigma1", "sigma2", "cluster", "fidelity"])
        for i in range(len(cand)):
            row = [f"{v:.12g}" for v in np.concatenate([cand.X[i], cand.F[i], cand.U[i]])]
            w.writerow(row + [int(labels[i]), allocation.get(i, 0)])


def write_hv_history(path, state, meta=None):
    with open(path, "w", newline="") as fh:
        write_meta_line(fh, meta)
        w = csv.writer(fh)
        w.writerow(["iteration", "hypervolume", "max_normalized_uncertainty"])
        for t, hv in enumerate(state.hv_history):
            u = state.uncertainty_history[t] if t < len(state.uncertainty_history) else ""
            w.writerow([t, repr(hv), "" if u == "" else repr(u)])


def write_budget(path, state, meta=None):
    with open(path, "w", newline="") as fh:
        write_meta_line(fh, meta)
        w = csv.writer(fh)
        w.writerow(["iteration", "n_lf", "n_hf", "cost_lf", "cost_hf"])
        for row in state.ledger:
            w.writerow([row["iteration"], row["n_lf"], row["n_hf"], repr(row["cost_lf"]), repr(row["cost_hf"])])


def loop_report(history, state):
    c = state.counts()
    return {
        "iterations": state.iteration,
        "stop_reason": state.stop_reason,
        "reference_point": state.ref.tolist(),
        "hypervolume_history": [float(h) for h in state.hv_history],
        "max_normalized_uncertainty": [float(u) for u in state.uncertainty_history],
        "final_max_normalized_uncertainty": float(state.final_uncertainty),
        "evaluations": {"lf": c[1], "hf": c[2]},
        "failures": len(state.failures),
        "final_front": {"f": history[-1].points.tolist(), "x": history[-1].X.tolist()},
    }


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
