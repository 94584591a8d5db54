"""Lower-level internal sizing of the pressure hull and buoyancy system.

The decision vector is ``y = (xi0, zeta0, a, b, c, t, v_buo)``: hull centre in
the symmetry plane, internal semi-axes, wall thickness and the additional
buoyancy volume. Empty weight is minimized under five constraint families
(structure, hydrostatics, surfacing, containment, payload) with a
deterministic particle swarm followed by a compass pattern search.

All constraint functions accept either a :class:`SizingVariables`, a single
7-vector or a ``(n, 7)`` batch; batches return arrays, single designs floats.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from . import kernels

CONSTRAINT_NAMES = ("struct", "hydro", "surf", "cont", "pay")
VARIABLE_NAMES = ("xi0", "zeta0", "a", "b", "c", "t", "v_buo")
FOUR_THIRDS_PI = 4.0 * np.pi / 3.0


class PackagingError(ValueError):
    """Internal volumes exceed the outer-shell volume."""


@dataclass(frozen=True)
class MassBudget:
    m_sci: float = 1.0
    m_pay: float = 2.5
    m_bat: float = 8.0
    m_buo: float = 7.5
    V_sci: float = 0.0068
    V_pay: float = 0.0026
    V_bat: float = 0.005
    rho_fill: float = 950.0
    rho_ph: float = 2700.0
    E_ph: float = 69e9
    nu_ph: float = 0.33
    P_max: float = 10e6
    tau: float = 2.0
    eps_cont: float = 0.05
    rho_water: float = 1030.0
    gravity: float = 9.804

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"MassBudget.{name} must be > 0, got {value}")
        if not self.nu_ph < 0.5:
            raise ValueError("MassBudget.nu_ph must lie in (0, 0.5)")

    @property
    def fixed_mass(self):
        return self.m_sci + self.m_pay + self.m_bat + self.m_buo


@dataclass(frozen=True)
class SizingVariables:
    xi0: float
    zeta0: float
    a: float
    b: float
    c: float
    t: float
    v_buo: float

    def __post_init__(self):
        for name in ("a", "b", "c", "t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SizingVariables.{name} must be > 0")

    def as_array(self):
        return np.array([getattr(self, n) for n in VARIABLE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, y):
        return cls(*(float(v) for v in np.asarray(y, dtype=float).ravel()))


def _batch(y):
    if isinstance(y, SizingVariables):
        return y.as_array()[None, :], True
    arr = np.asarray(y, dtype=float)
    if arr.shape[-1] != 7:
        raise ValueError("sizing vector must have 7 components")
    return arr.reshape(-1, 7), arr.ndim == 1


def _out(values, single):
    return float(values[0]) if single else values


def hull_volumes(y):
    """Internal and external ellipsoid volumes ``(V_int, V_ext)``."""
    Y, single = _batch(y)
    a, b, c, t = Y[:, 2], Y[:, 3], Y[:, 4], Y[:, 5]
    v_int = FOUR_THIRDS_PI * a * b * c
    v_ext = FOUR_THIRDS_PI * (a + t) * (b + t) * (c + t)
    return _out(v_int, single), _out(v_ext, single)


def occupied_volume(delta_Vb, y, budget):
    """Volume taken by hull, bladders and science payload."""
    Y, single = _batch(y)
    _, v_ext = hull_volumes(Y)
    return _out(v_ext + delta_Vb + Y[:, 6] + budget.V_sci, single)


def empty_weight(volume, delta_Vb, y, budget, check=True):
    """Pressure-hull shell weight plus filler weight [N].

    Raises :class:`PackagingError` when ``check`` is set and the occupied
    internal volume exceeds ``volume``; the solver evaluates with
    ``check=False`` and penalizes the overrun as a packaging violation.
    """
    Y, single = _batch(y)
    v_int, v_ext = hull_volumes(Y)
    occupied = v_ext + delta_Vb + Y[:, 6] + budget.V_sci
    if check and np.any(occupied > volume):
        raise PackagingError(f"occupied volume {occupied.max():.6g} exceeds shell volume {volume:.6g}")
    w_ph = (v_ext - v_int) * budget.rho_ph * budget.gravity
    w_fill = (volume - occupied) * budget.rho_fill * budget.gravity
    return _out(w_ph + w_fill, single)


def total_weight(volume, delta_Vb, y, budget):
    w = empty_weight(volume, delta_Vb, y, budget, check=False)
    return w + budget.fixed_mass * budget.gravity


def critical_pressure(y, budget):
    Y, single = _batch(y)
    a, b, c = Y[:, 2], Y[:, 3], Y[:, 4]
    axes = -np.sort(-np.column_stack([a, b, c]), axis=1)
    a, b, c = axes[:, 0], axes[:, 1], axes[:, 2]
    r_min = np.min(np.column_stack([b**2 / a, c**2 / a, a**2 / b, c**2 / b, a**2 / c, b**2 / c]), axis=1)
    p_cr = 2.0 * budget.E_ph / np.sqrt(3.0 * (1.0 - budget.nu_ph**2)) * (Y[:, 5] / r_min) ** 2
    return _out(p_cr, single)


def g_struct(y, budget):
    """Buckling margin ``P_max / P_cr - 1``."""
    return budget.P_max / critical_pressure(y, budget) - 1.0


def buoyancy(volume, delta_Vb, y, budget):
    Y, single = _batch(y)
    b = budget.rho_water * budget.gravity * (volume - (delta_Vb + Y[:, 6]) - budget.V_sci)
    return _out(b, single)


def g_hydro(volume, delta_Vb, y, budget):
    """Neutral-buoyancy margin ``(W - B) / tau - 1`` at operating depth."""
    w = total_weight(volume, delta_Vb, y, budget)
    return (w - buoyancy(volume, delta_Vb, y, budget)) / budget.tau - 1.0


def g_surf(volume, delta_Vb, y, budget):
    """Surfacing margin with empty bladders."""
    w = total_weight(volume, delta_Vb, y, budget)
    return w / (budget.rho_water * budget.gravity * (volume - budget.V_sci)) - 1.0


def g_cont(points, y, budget):
    """Summed containment violation of the shell points against the inflated hull."""
    Y, single = _batch(y)
    centers = Y[:, [0, 1]]
    axes = Y[:, 2:5] + Y[:, 5:6]
    return _out(kernels.containment_sum(points, centers, axes, budget.eps_cont), single)


def g_pay(y, budget):
    v_int, _ = hull_volumes(y)
    return (budget.V_pay + budget.V_bat) / v_int - 1.0


def g_pack(volume, delta_Vb, y, budget):
    """Packaging margin: occupied internal volume over shell volume, minus one."""
    return occupied_volume(delta_Vb, y, budget) / volume - 1.0


def symmetry_section(points, tol=1e-12):
    """Closed ``(x, z)`` loop of the shell's symmetry-plane section, or ``None``."""
    root = np.asarray(points, dtype=float)
    root = root[np.abs(root[:, 1]) < tol][:, [0, 2]]
    if len(root) < 3:
        return None
    centre = root.mean(axis=0)
    # the symmetric root section is convex, so angular order traces its loop
    order = np.argsort(np.arctan2(root[:, 1] - centre[1], root[:, 0] - centre[0]), kind="stable")
    return root[order]


def outside_distance(loop, P):
    """Distance of each point in ``P`` (n, 2) outside the closed polygon ``loop``; 0 inside."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    a = loop
    b = np.roll(loop, -1, axis=0)
    px, pz = P[:, None, 0], P[:, None, 1]
    straddle = (a[None, :, 1] > pz) != (b[None, :, 1] > pz)
    dz = np.where(b[:, 1] != a[:, 1], b[:, 1] - a[:, 1], 1.0)
    x_cross = a[:, 0] + (pz - a[:, 1]) * (b[:, 0] - a[:, 0]) / dz
    inside = np.count_nonzero(straddle & (px < x_cross), axis=1) % 2 == 1
    ab = b - a
    len2 = np.where(np.sum(ab * ab, axis=1) > 0, np.sum(ab * ab, axis=1), 1.0)
    rel = P[:, None, :] - a[None, :, :]
    s = np.clip(np.sum(rel * ab[None], axis=2) / len2, 0.0, 1.0)
    d = np.linalg.norm(rel - s[:, :, None] * ab[None], axis=2).min(axis=1)
    return np.where(inside, 0.0, d)


@dataclass
class PsoConfig:
    particles: int = 32
    iterations: int = 200
    inertia: float = 0.721
    cognitive: float = 1.193
    social: float = 1.193
    local_iterations: int = 50
    local_shrink: float = 0.5
    local_step: float = 0.1
    penalty: float = 1e6
    seed: int = 0
    active: tuple = CONSTRAINT_NAMES
    axis_bounds: tuple = (0.02, 0.6)
    thickness_bounds: tuple = (0.001, 0.03)
    v_buo_max: float = 0.05
    guards: bool = True

    def __post_init__(self):
        unknown = set(self.active) - set(CONSTRAINT_NAMES)
        if unknown:
            raise ValueError(f"unknown constraints {sorted(unknown)}")
        if self.particles < 2 or self.iterations < 1:
            raise ValueError("PSO needs >= 2 particles and >= 1 iteration")


@dataclass
class SizingSolution:
    y_star: SizingVariables
    W_empty_star: float
    constraint_values: np.ndarray
    feasible: bool
    pso_iterations: int
    packaging_margin: float = 0.0
    max_violation: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    def to_dict(self, include_trace=False):
        out = {
            "y_star": dict(zip(VARIABLE_NAMES, self.y_star.as_array().tolist())),
            "W_empty_star": self.W_empty_star,
            "constraints": dict(zip(CONSTRAINT_NAMES, np.asarray(self.constraint_values).tolist())),
            "packaging_margin": self.packaging_margin,
            "feasible": self.feasible,
            "pso_iterations": self.pso_iterations,
            "max_violation": self.max_violation,
        }
        if include_trace:
            out["trace"] = list(self.trace)
        return out

    def to_json(self, include_trace=False):
        return json.dumps(self.to_dict(include_trace), indent=2, sort_keys=True)


class SizingProblem:
    """Constraint and objective evaluation for one outer geometry.

    Parameters
    ----------
    volume : float
        Enclosed shell volume [m^3].
    points : ndarray, shape (n, 3)
        Outer-shell mesh points (full, mirrored body).
    delta_Vb : float
        Buoyancy variation required for steady gliding [m^3].
    """

    def __init__(self, volume, points, delta_Vb, budget=None, config=None, center_box=None):
        self.volume = float(volume)
        self.points = np.ascontiguousarray(points, dtype=float)
        self.delta_Vb = float(delta_Vb)
        self.budget = budget or MassBudget()
        self.config = config or PsoConfig()
        if not self.volume > 0:
            raise ValueError("shell volume must be > 0")
        if not self.delta_Vb >= 0:
            raise ValueError("delta_Vb must be >= 0")
        self.lower, self.upper = self._bounds(center_box)
        self._active = np.array([n in self.config.active for n in CONSTRAINT_NAMES])
        self.section = symmetry_section(self.points) if self.config.guards else None
        if self.section is not None:
            self._section_scale = float(np.ptp(self.section[:, 0])) or 1.0

    def _bounds(self, center_box):
        if center_box is None:
            # hull centre stays within the symmetry-plane section of the shell
            root = self.points[np.abs(self.points[:, 1]) < 1e-12]
            if len(root) == 0:
                root = self.points
            center_box = (root[:, 0].min(), root[:, 0].max(), root[:, 2].min(), root[:, 2].max())
        x0, x1, z0, z1 = center_box
        cfg = self.config
        v_lo = self.delta_Vb
        v_hi = max(cfg.v_buo_max, v_lo)
        # a contained hull cannot exceed the shell's half-extent along any axis
        half = 0.5 * (self.points.max(axis=0) - self.points.min(axis=0))
        ax_hi = np.maximum(np.minimum(cfg.axis_bounds[1], half), cfg.axis_bounds[0])
        lo = np.array([x0, z0, *([cfg.axis_bounds[0]] * 3), cfg.thickness_bounds[0], v_lo])
        hi = np.array([x1, z1, *ax_hi, cfg.thickness_bounds[1], v_hi])
        return lo, hi

    def weight(self, Y):
        return empty_weight(self.volume, self.delta_Vb, Y, self.budget, check=False)

    def constraints(self, Y):
        """Constraint matrix ``(n, 5)`` in :data:`CONSTRAINT_NAMES` order."""
        Y, single = _batch(Y)
        b = self.budget
        G = np.column_stack(
            [
                g_struct(Y, b),
                g_hydro(self.volume, self.delta_Vb, Y, b),
                g_surf(self.volume, self.delta_Vb, Y, b),
                g_cont(self.points, Y, b),
                g_pay(Y, b),
            ]
        )
        return G[0] if single else G

    def guards(self, Y):
        """Packaging margin and hull-centre offset outside the symmetry section, ``(n, 2)``.

        The point-wise containment sum cannot tell a hull inside the shell
        from one parked wholly outside it, so the centre must also lie
        inside the section; both are ``<= 0`` when satisfied.
        """
        Y, _ = _batch(Y)
        if not self.config.guards:
            return np.full((len(Y), 2), -np.inf)
        pack = g_pack(self.volume, self.delta_Vb, Y, self.budget)
        if self.section is None:
            centre = np.zeros(len(Y))
        else:
            centre = outside_distance(self.section, Y[:, :2]) / self._section_scale
        return np.column_stack([pack, centre])

    def violation(self, Y):
        """Per-design violation vector: active constraints plus the guards."""
        Y, _ = _batch(Y)
        G = np.where(self._active, self.constraints(Y), -np.inf)
        return np.maximum(0.0, np.column_stack([G, self.guards(Y)]))

    def penalized(self, Y):
        v = self.violation(Y)
        return self.weight(Y) + self.config.penalty * np.sum(v * v, axis=1)

    def to_unit(self, Y):
        span = np.where(self.upper > self.lower, self.upper - self.lower, 1.0)
        return (Y - self.lower) / span

    def from_unit(self, Z):
        return self.lower + np.clip(Z, 0.0, 1.0) * (self.upper - self.lower)


def _better(w1, v1, w2, v2):
    """Feasibility-rule comparison: is design 1 strictly better than design 2?"""
    if v1 == 0.0 and v2 == 0.0:
        return w1 < w2
    if v1 == 0.0 or v2 == 0.0:
        return v1 == 0.0
    return v1 < v2


class _Incumbent:
    def __init__(self):
        self.y = None
        self.w = np.inf
        self.v = np.inf

    def offer(self, Y, W, V):
        for y, w, v in zip(Y, W, V):
            if self.y is None or _better(w, v, self.w, self.v):
                self.y, self.w, self.v = y.copy(), float(w), float(v)


SEED_ASPECTS = tuple((fb, fc) for fb in (1.0, 0.6, 0.35) for fc in (1.0, 0.6, 0.35))


def _admissible(problem, Y):
    ok = g_cont(problem.points, Y, problem.budget) <= 0.0
    if problem.config.guards:
        ok &= g_pack(problem.volume, problem.delta_Vb, Y, problem.budget) <= 0.0
    return ok


def _inflate(problem, Y, n_bisect=24):
    """Rescale the hull axes of each row of ``Y`` (fixed ratio) to the largest admissible size.

    Containment and packaging both tighten monotonically as the hull grows,
    so the largest scale keeping both satisfied is found by bisection.
    Returns ``(Y_inflated, valid)``; rows where even the smallest in-bounds
    scale is inadmissible are flagged invalid and left unchanged.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    lo, hi = problem.lower[2:5], problem.upper[2:5]
    axes = Y[:, 2:5]
    s_lo = np.max(lo / axes, axis=1)
    s_hi = np.min(hi / axes, axis=1)

    def at(scale):
        out = Y.copy()
        out[:, 2:5] = np.clip(scale[:, None] * axes, lo, hi)
        return out

    valid = (s_lo <= s_hi) & _admissible(problem, at(s_lo))
    inside = np.where(valid, s_lo, np.nan)
    top = _admissible(problem, at(s_hi))
    inside[valid & top] = s_hi[valid & top]
    search = valid & ~top
    if search.any():
        a, b = s_lo[search], s_hi[search]
        rows = Y[search]
        sub = lambda sc: np.column_stack([rows[:, :2], np.clip(sc[:, None] * rows[:, 2:5], lo, hi), rows[:, 5:]])
        for _ in range(n_bisect):
            mid = 0.5 * (a + b)
            ok = _admissible(problem, sub(mid))
            a = np.where(ok, mid, a)
            b = np.where(ok, b, mid)
        inside[search] = a
    out = Y.copy()
    out[valid] = at(np.where(valid, inside, 1.0))[valid]
    return out, valid


def _inscribed_seeds(problem):
    """Largest admissible hulls of a few fixed aspect ratios, in unit coordinates.

    Each seed centres the hull on the symmetry section's centroid with the
    thinnest wall and either buoyancy-volume bound before inflating it.
    Seeds come back best first under the feasibility rule.
    """
    if problem.section is None:
        return np.empty((0, 7))
    lo, hi = problem.lower, problem.upper
    centre = np.clip(problem.section.mean(axis=0), lo[:2], hi[:2])
    seeds = []
    for v_buo in (hi[6], lo[6]):
        for fb, fc in SEED_ASPECTS:
            axes = np.array([hi[2], lo[3] + fb * (hi[3] - lo[3]), lo[4] + fc * (hi[4] - lo[4])])
            seeds.append(np.concatenate([centre, axes, [lo[5], v_buo]]))
    Y, valid = _inflate(problem, np.array(seeds))
    Y = Y[valid]
    # best first under the feasibility rule: violation, then weight
    order = np.lexsort((problem.weight(Y), problem.violation(Y).sum(axis=1)))
    return problem.to_unit(Y[order])


def _pso(problem, incumbent, trace):
    cfg = problem.config
    dim = 7
    free = problem.upper > problem.lower
    Z = qmc.Sobol(dim, scramble=True, seed=cfg.seed).random(cfg.particles)
    seeds = _inscribed_seeds(problem)[: cfg.particles // 2]
    Z[: len(seeds)] = seeds
    Z[:, ~free] = 0.0
    vel = np.zeros_like(Z)
    Y = problem.from_unit(Z)
    f = problem.penalized(Y)
    incumbent.offer(Y, problem.weight(Y), problem.violation(Y).sum(axis=1))
    pbest, pbest_f = Z.copy(), f.copy()
    for it in range(cfg.iterations):
        g = int(np.argmin(pbest_f))  # first minimum: fixed tie order
        gbest = pbest[g]
        vel = cfg.inertia * vel + cfg.cognitive * (pbest - Z) + cfg.social * (gbest - Z)
        Z = Z + vel
        hit = (Z < 0.0) | (Z > 1.0)
        Z = np.clip(Z, 0.0, 1.0)
        vel[hit] = 0.0
        Y = problem.from_unit(Z)
        f = problem.penalized(Y)
        incumbent.offer(Y, problem.weight(Y), problem.violation(Y).sum(axis=1))
        improved = f < pbest_f
        pbest[improved] = Z[improved]
        pbest_f[improved] = f[improved]
        trace.append({"iteration": it, "best_penalized": float(pbest_f.min())})
    return cfg.iterations, (seeds[0] if len(seeds) else None)


def _pattern_search(problem, incumbent, trace, min_step=1e-6):
    cfg = problem.config
    z = problem.to_unit(incumbent.y[None, :])[0]
    free = np.flatnonzero(problem.upper > problem.lower)
    step = cfg.local_step
    for it in range(cfg.local_iterations):
        if step < min_step:
            break
        dirs = np.zeros((2 * len(free), 7))
        dirs[np.arange(len(free)), free] = step
        dirs[len(free) + np.arange(len(free)), free] = -step
        Zp = np.clip(z + dirs, 0.0, 1.0)
        Y = problem.from_unit(Zp)
        # trial points projected onto the contact surface as well
        grown, valid = _inflate(problem, np.vstack([incumbent.y, Y]))
        Y = np.vstack([Y, grown[valid]])
        W = problem.weight(Y)
        V = problem.violation(Y).sum(axis=1)
        before = (incumbent.w, incumbent.v)
        incumbent.offer(Y, W, V)
        if (incumbent.w, incumbent.v) != before:
            z = problem.to_unit(incumbent.y[None, :])[0]
        else:
            step *= cfg.local_shrink
        trace.append({"local_iteration": it, "step": step, "best_weight": incumbent.w, "violation": incumbent.v})


def solve_sizing(volume, points, delta_Vb, budget=None, config=None, center_box=None):
    """Minimum empty-weight sizing for one geometry.

    Returns the best feasible point found, or the least-violating point
    flagged ``feasible=False`` with the per-constraint maximum violations.
    """
    problem = SizingProblem(volume, points, delta_Vb, budget, config, center_box)
    incumbent = _Incumbent()
    trace = []
    n_iter, seed = _pso(problem, incumbent, trace)
    _pattern_search(problem, incumbent, trace)
    if seed is not None:
        # second local start from the best inscribed seed
        other = _Incumbent()
        y0 = problem.from_unit(seed[None, :])
        other.offer(y0, problem.weight(y0), problem.violation(y0).sum(axis=1))
        _pattern_search(problem, other, trace)
        incumbent.offer(other.y[None, :], [other.w], [other.v])
    y = incumbent.y
    G = problem.constraints(y)
    pack = float(g_pack(problem.volume, problem.delta_Vb, y, problem.budget))
    guard = problem.guards(y)[0]
    active = problem._active
    feasible = bool(np.all(G[active] <= 0.0) and np.all(guard <= 0.0))
    viol = {n: float(max(0.0, g)) for n, g, a in zip(CONSTRAINT_NAMES, G, active) if a}
    if problem.config.guards:
        viol["pack"] = max(0.0, float(guard[0]))
        viol["centre"] = max(0.0, float(guard[1]))
    return SizingSolution(
        y_star=SizingVariables.from_array(y),
        W_empty_star=float(problem.weight(y[None, :])[0]),
        constraint_values=G,
        feasible=feasible,
        pso_iterations=n_iter,
        packaging_margin=pack,
        max_violation=viol,
        trace=trace,
    )
