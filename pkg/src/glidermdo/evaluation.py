"""Coupling of geometry, hydrodynamics and sizing into design evaluations."""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import geometry, hydro, reduction, sizing
from .config import load_design_space
from .optimizer import EvalResult, LoopConfig


@dataclass
class DesignResult:
    u: np.ndarray
    fidelity: int
    volume: float = np.nan
    polar: hydro.PolarCurve = None
    E_max: float = np.nan
    aoa_star: float = np.nan
    gamma: float = np.nan
    delta_Vb: float = np.nan
    sized: sizing.SizingSolution = None
    hydro_time: float = 0.0
    ok: bool = True
    error: str = ""

    @property
    def objectives(self):
        """``(-E_max, W*_empty)`` for minimization."""
        w = self.sized.W_empty_star if self.sized is not None else np.nan
        return np.array([-self.E_max, w])

    def summary(self):
        out = {
            "fidelity": self.fidelity,
            "ok": self.ok,
            "error": self.error,
            "volume": self.volume,
            "E_max": self.E_max,
            "aoa_star": self.aoa_star,
            "gamma": self.gamma,
            "delta_Vb": self.delta_Vb,
            "hydro_time": self.hydro_time,
        }
        if self.sized is not None:
            out["sizing"] = self.sized.to_dict()
        return out


@dataclass
class GliderEvaluator:
    """Evaluates full 32-parameter designs at either fidelity level."""

    conditions: hydro.FlowConditions = field(default_factory=hydro.FlowConditions)
    budget: sizing.MassBudget = field(default_factory=sizing.MassBudget)
    hydro_settings: hydro.HydroSettings = field(default_factory=hydro.HydroSettings)
    pso: sizing.PsoConfig = field(default_factory=sizing.PsoConfig)
    n_span: int = 57
    n_chord: int = 57
    snapshot_aoa: float = 8.0
    snapshot_field: str = "strip"
    require_feasible: bool = True

    @classmethod
    def from_config(cls, cfg):
        flow = hydro.FlowConditions(**cfg["flow"])
        budget = sizing.MassBudget(**cfg["budget"], rho_water=flow.density, gravity=flow.gravity)
        h = cfg["hydro"]
        settings = hydro.HydroSettings(
            lattices={1: tuple(h["coarse"]), 2: tuple(h["fine"])}, transition_re=h["transition_re"]
        )
        s = dict(cfg["sizing"])
        s["axis_bounds"] = tuple(s["axis_bounds"])
        s["thickness_bounds"] = tuple(s["thickness_bounds"])
        pso = sizing.PsoConfig(**s, seed=cfg.seed)
        g = cfg["geometry"]
        return cls(
            flow, budget, settings, pso, g["n_span"], g["n_chord"], h["snapshot_aoa"], cfg["reduction"]["field"]
        )

    def geometry(self, u):
        return geometry.build_geometry(u, self.n_span, self.n_chord)

    def hydrodynamics(self, geo, fidelity):
        """Polar, efficiency peak and glide closure; returns ``(polar, peak, glide, seconds)``."""
        t0 = time.perf_counter()
        pol = hydro.polar(geo, self.conditions, fidelity, self.hydro_settings)
        elapsed = time.perf_counter() - t0
        peak = hydro.max_efficiency(pol)
        k = int(np.flatnonzero(pol.aoa == peak.aoa_star)[0])
        glide = hydro.glide_closure(pol.lift[k], pol.drag[k], self.conditions)
        return pol, peak, glide, elapsed

    def evaluate(self, u, fidelity):
        """Full bi-level evaluation; failures are reported, never raised."""
        res = DesignResult(np.asarray(u, dtype=float), int(fidelity))
        try:
            geo = self.geometry(u)
            res.volume = geo.volume
            pol, peak, glide, res.hydro_time = self.hydrodynamics(geo, fidelity)
            res.polar = pol
            res.E_max, res.aoa_star = peak.E_max, peak.aoa_star
            res.gamma, res.delta_Vb = glide.gamma, glide.delta_Vb
            res.sized = sizing.solve_sizing(geo.volume, geo.mesh.points, glide.delta_Vb, self.budget, self.pso)
            if self.require_feasible and not res.sized.feasible:
                res.ok = False
                res.error = "lower-level sizing found no feasible point"
        except (ValueError, hydro.HydroError, np.linalg.LinAlgError) as exc:
            res.ok = False
            res.error = f"{type(exc).__name__}: {exc}"
        return res

    def snapshot(self, u):
        """Physics sample for the embedding: ``(ok, field, (L, D))`` at the snapshot incidence."""
        try:
            geo = self.geometry(u)
            field_, lift, drag = hydro.pressure_snapshot(
                geo,
                self.conditions,
                self.snapshot_aoa,
                self.hydro_settings.lattice(1),
                self.hydro_settings.transition_re,
                self.snapshot_field,
            )
            return True, field_, np.array([lift, drag])
        except (ValueError, hydro.HydroError, np.linalg.LinAlgError):
            n_s, n_c = self.hydro_settings.lattice(1)
            n_f = n_s if self.snapshot_field == "strip" else n_s * n_c
            return False, np.full(n_f, np.nan), np.full(2, np.nan)


def _pool_map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


class _Snapshot:
    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, u):
        return self.evaluator.snapshot(u)


def sample_ensemble(evaluator, space, size, seed=0, threads=1):
    """Sobol designs over the full box with their coarse physics snapshots."""
    m = int(np.ceil(np.log2(max(size, 2))))
    Z = qmc.Sobol(len(space.lower), scramble=True, seed=seed).random_base2(m)[:size]
    U = space.from_unit(Z)
    out = _pool_map(_Snapshot(evaluator), list(U), threads)
    ok = np.array([o[0] for o in out])
    F = np.array([o[1] for o in out])
    C = np.array([o[2] for o in out])
    return reduction.Ensemble(U, F, C, ok)


class _Evaluate:
    def __init__(self, evaluator, embedding):
        self.evaluator = evaluator
        self.embedding = embedding

    def __call__(self, job):
        x, fidelity = job
        return self.evaluator.evaluate(reduction.back_map(self.embedding, x), fidelity)


class ReducedProblem:
    """Bi-objective design problem in the embedding's reduced coordinates."""

    def __init__(self, evaluator, embedding, threads=1):
        self.evaluator = evaluator
        self.embedding = embedding
        self.bounds = np.asarray(embedding.x_bounds, dtype=float)
        self.threads = threads
        self.results = []

    def design(self, x):
        return reduction.back_map(self.embedding, x)

    def _wrap(self, x, res):
        self.results.append((np.asarray(x, dtype=float), res))
        info = {} if res.ok else {"error": res.error}
        return EvalResult(res.objectives, res.ok, res.hydro_time, info)

    def evaluate(self, x, fidelity):
        return self._wrap(x, self.evaluator.evaluate(self.design(x), fidelity))

    def evaluate_batch(self, xs, fidelities):
        """Evaluations of ``xs`` at ``fidelities`` on the worker pool, in input order."""
        jobs = [(np.asarray(x, dtype=float), int(f)) for x, f in zip(xs, fidelities)]
        results = _pool_map(_Evaluate(self.evaluator, self.embedding), jobs, self.threads)
        return [self._wrap(x, res) for (x, _), res in zip(jobs, results)]


def baseline_objectives(evaluator, space=None, fidelity=2):
    space = space or load_design_space()
    return evaluator.evaluate(space.baseline, fidelity)


def loop_config(cfg):
    """:class:`LoopConfig` from the ``optimizer`` and ``surrogate`` config sections."""
    opt = dict(cfg["optimizer"])
    opt["static_costs"] = tuple(opt["static_costs"])
    opt["log_objectives"] = (False, bool(opt.pop("log_weight")))
    return LoopConfig(**opt, seed=cfg.seed, mu=cfg["surrogate"]["mu"], n_eps=cfg["surrogate"]["n_eps"])
