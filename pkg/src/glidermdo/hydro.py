"""Two-level hydrodynamic evaluator.

Lift and induced drag come from a steady vortex-ring lattice on the mean
surface; viscous drag from flat-plate skin-friction correlations applied panel
by panel on the shell mesh. The fidelity axis is lattice resolution.
"""

import csv
import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import kernels
from .geometry import camber_surface

AOA_GRID_DEG = np.arange(-2.0, 13.0, 1.0)
MAX_AOA_DEG = 20.0


class HydroError(RuntimeError):
    """Hydrodynamic evaluation failed; the design is filtered."""


class NoPositiveLiftError(HydroError):
    pass


@dataclass(frozen=True)
class FlowConditions:
    speed: float = 0.25
    density: float = 1030.0
    viscosity: float = 0.0012
    gravity: float = 9.804

    def __post_init__(self):
        for name in ("speed", "density", "viscosity", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"FlowConditions.{name} must be > 0")

    @property
    def dynamic_pressure(self):
        return 0.5 * self.density * self.speed**2

    def reynolds(self, length):
        return self.density * self.speed * np.asarray(length) / self.viscosity


@dataclass
class PolarCurve:
    aoa: np.ndarray
    lift: np.ndarray
    drag: np.ndarray
    fidelity: int = 1

    def __post_init__(self):
        self.aoa = np.asarray(self.aoa, dtype=float)
        self.lift = np.asarray(self.lift, dtype=float)
        self.drag = np.asarray(self.drag, dtype=float)
        if not (self.aoa.shape == self.lift.shape == self.drag.shape) or self.aoa.ndim != 1:
            raise ValueError("polar arrays must be 1-D and of equal length")
        if len(self.aoa) == 0:
            raise ValueError("empty polar")
        if np.any(np.diff(self.aoa) <= 0):
            raise ValueError("polar angles of attack must be strictly increasing")
        if not (np.all(np.isfinite(self.lift)) and np.all(np.isfinite(self.drag))):
            raise HydroError("non-finite forces in polar")
        if np.any(self.drag <= 0):
            raise HydroError("non-positive drag in polar")


@dataclass
class GlideState:
    gamma: float = None
    delta_Vb: float = None
    aoa_star: float = None
    E_max: float = None


@dataclass
class HydroSettings:
    """Lattice sizes per fidelity level as ``(n_span, n_chord)`` panels."""

    lattices: dict = field(default_factory=lambda: {1: (20, 10), 2: (40, 20)})
    transition_re: float = 5e5
    aoa_deg: np.ndarray = field(default_factory=lambda: AOA_GRID_DEG.copy())

    def lattice(self, fidelity):
        try:
            return tuple(self.lattices[int(fidelity)])
        except KeyError:
            raise ValueError(f"unknown fidelity level {fidelity!r}") from None


def freestream(aoa_deg, speed=1.0):
    a = np.radians(aoa_deg)
    return speed * np.array([np.cos(a), 0.0, np.sin(a)])


class VortexLattice:
    """Vortex-ring lattice on a half-body mean surface, mirrored about ``y = 0``.

    Each ring has its leading side on its panel's quarter-chord line and its
    aft side on the next panel's, so the chordwise sides follow the surface;
    trailing-edge rings shed two legs along ``+x``. Circulations reported by
    :meth:`circulation` are the net bound-vortex strengths on the
    quarter-chord lines (ring strength minus the upstream ring's), which
    makes each strip equivalent to horseshoes bent along the surface.

    Parameters
    ----------
    nodes : ndarray, shape (n_span + 1, n_chord + 1, 3)
        Lattice corner points, root station first, leading edge first.
    """

    def __init__(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 3 or nodes.shape[0] < 3 or nodes.shape[1] < 3:
            raise ValueError("lattice needs at least 2 x 2 panels")
        self.nodes = nodes
        self.n_span = nodes.shape[0] - 1
        self.n_chord = nodes.shape[1] - 1
        n00 = nodes[:-1, :-1]
        n10 = nodes[1:, :-1]
        n01 = nodes[:-1, 1:]
        n11 = nodes[1:, 1:]
        # quarter-chord points on every spanwise edge line, trailing edge appended
        quarter = nodes[:, :-1] + 0.25 * (nodes[:, 1:] - nodes[:, :-1])
        aft = np.concatenate([quarter[:, 1:], nodes[:, -1:]], axis=1)
        self.a = quarter[:-1].reshape(-1, 3)
        self.b = quarter[1:].reshape(-1, 3)
        self.corners = np.stack([quarter[:-1], quarter[1:], aft[1:], aft[:-1]], axis=2).reshape(-1, 4, 3)
        wake = np.zeros((self.n_span, self.n_chord))
        wake[:, -1] = 1.0
        self.wake = wake.ravel()
        self.colloc = (0.5 * ((n00 + 0.75 * (n01 - n00)) + (n10 + 0.75 * (n11 - n10)))).reshape(-1, 3)
        nrm = np.cross(n11 - n00, n10 - n01).reshape(-1, 3)
        mag = np.linalg.norm(nrm, axis=1)
        if np.any(mag <= 1e-14):
            raise HydroError("degenerate lattice panel")
        self.area = 0.5 * mag
        self.normals = nrm / mag[:, None]
        self.span_len = self.b[:, 1] - self.a[:, 1]
        aic = kernels.aic_matrix(self.colloc, self.normals, self.corners, self.wake)
        if not np.all(np.isfinite(aic)):
            raise HydroError("non-finite influence coefficients")
        self._lu = lu_factor(aic, check_finite=False)
        diag = np.abs(np.diag(self._lu[0]))
        if diag.min() <= 1e-13 * diag.max():
            raise HydroError("singular influence matrix")

    def circulation(self, aoa_deg, speed=1.0):
        """Net bound-vortex strengths, shape ``(len(aoa), n_span, n_chord)``."""
        aoa = np.atleast_1d(np.asarray(aoa_deg, dtype=float))
        if np.any(np.abs(aoa) >= MAX_AOA_DEG):
            raise ValueError(f"|aoa| must be below {MAX_AOA_DEG} deg")
        vinf = np.stack([freestream(a, speed) for a in aoa])
        rhs = -(self.normals @ vinf.T)
        rings = lu_solve(self._lu, rhs, check_finite=False).T.reshape(len(aoa), self.n_span, self.n_chord)
        return np.diff(rings, axis=2, prepend=0.0)

    def lift(self, gamma, conditions):
        # Kutta-Joukowski with the freestream, both halves
        ly = self.span_len.reshape(self.n_span, self.n_chord)
        return 2.0 * conditions.density * conditions.speed * np.sum(gamma * ly, axis=(-2, -1))

    def induced_drag(self, gamma, conditions):
        """Trefftz-plane induced drag of the full (mirrored) wake."""
        gam = gamma[None] if gamma.ndim == 2 else gamma
        strip = gam.sum(axis=2)  # (n_aoa, n_span)
        te = self.nodes[:, -1, 1:]  # (n_span + 1, 2) as (y, z)
        padded = np.pad(strip, ((0, 0), (1, 1)))
        shed = padded[:, :-1] - padded[:, 1:]  # (n_aoa, n_span + 1)
        pos = np.vstack([te, te * [-1.0, 1.0]])
        strength = np.hstack([shed, -shed])
        mid = 0.5 * (te[:-1] + te[1:])
        seg = te[1:] - te[:-1]
        ds = np.linalg.norm(seg, axis=1)
        nrm = np.column_stack([-seg[:, 1], seg[:, 0]]) / ds[:, None]
        d = mid[:, None, :] - pos[None, :, :]
        r2 = np.sum(d * d, axis=2)
        r2 = np.where(r2 < 1e-24, np.inf, r2)
        # point vortex along +x: (v_y, v_z) = g / (2 pi r^2) * (-dz, dy)
        kern = (-d[:, :, 1] * nrm[:, None, 0] + d[:, :, 0] * nrm[:, None, 1]) / (2.0 * np.pi * r2)
        wash = strength @ kern.T  # (n_aoa, n_span)
        d_i = -0.5 * conditions.density * 2.0 * np.sum(strip * wash * ds[None, :], axis=1)
        return d_i if gamma.ndim == 3 else d_i[0]

    def delta_cp(self, gamma, conditions):
        """Panel loading coefficient ``rho U Gamma l_y / (q A)``."""
        ly = self.span_len.reshape(self.n_span, self.n_chord)
        area = self.area.reshape(self.n_span, self.n_chord)
        return 2.0 * gamma * ly / (conditions.speed * area)

    def strip_loading(self, gamma, conditions):
        """Sectional lift coefficient of each spanwise strip (area-weighted panel loading)."""
        area = self.area.reshape(self.n_span, self.n_chord)
        dcp = self.delta_cp(gamma, conditions)
        return np.sum(dcp * area, axis=-1) / np.sum(area, axis=-1)


def lattice_nodes(sections, lattice):
    n_span, n_chord = lattice
    if n_span < 2 or n_chord < 2:
        raise ValueError("lattice dims must be >= 2 each")
    return camber_surface(sections, n_span, n_chord)


def vlm_forces(nodes, aoa, conditions):
    """Lift and induced drag [N] of the mirrored lattice at ``aoa`` degrees."""
    vl = VortexLattice(nodes)
    gam = vl.circulation([aoa], conditions.speed)
    return float(vl.lift(gam, conditions)[0]), float(vl.induced_drag(gam, conditions)[0])


def _skin_run_lengths(grid):
    """Run length from the local leading edge to each panel's downstream edge.

    Returns ``(run, area)`` for the quad panels of the half-body skin, both of
    shape ``(n_span - 1, n_u)``; panel ``j`` spans loop points ``j`` and
    ``j + 1`` (cyclic).
    """
    n_span, n_u, _ = grid.shape
    le = n_u // 2
    closed = np.concatenate([grid, grid[:, :1]], axis=1)
    seg = np.linalg.norm(np.diff(closed, axis=1), axis=2)  # (n_span, n_u)
    run = np.empty((n_span, n_u))
    # upper side: panel j (< le) ends downstream at point j
    up = seg[:, :le][:, ::-1].cumsum(axis=1)[:, ::-1]
    run[:, :le] = up
    # lower side: panel j (>= le) ends downstream at point j + 1
    run[:, le:] = seg[:, le:].cumsum(axis=1)
    run_panel = 0.5 * (run[:-1] + run[1:])
    p00 = closed[:-1, :-1]
    p10 = closed[1:, :-1]
    p11 = closed[1:, 1:]
    p01 = closed[:-1, 1:]
    area = 0.5 * (
        np.linalg.norm(np.cross(p10 - p00, p11 - p00), axis=2) + np.linalg.norm(np.cross(p11 - p00, p01 - p00), axis=2)
    )
    return run_panel, area


def skin_friction(re, transition_re=5e5):
    re = np.maximum(np.asarray(re, dtype=float), 1.0)
    return np.where(re < transition_re, 1.328 / np.sqrt(re), 0.074 / re**0.2)


def viscous_drag_grid(grid, conditions, transition_re=5e5, mirror=True):
    run, area = _skin_run_lengths(np.asarray(grid, dtype=float))
    cf = skin_friction(conditions.reynolds(run), transition_re)
    d = conditions.dynamic_pressure * float(np.sum(cf * area))
    return 2.0 * d if mirror else d


def viscous_drag(mesh, conditions, transition_re=5e5):
    """Flat-plate skin-friction drag [N] of the whole shell (tip caps excluded).

    Each skin panel uses the laminar (``1.328/sqrt(Re)``) or turbulent
    (``0.074/Re**0.2``) correlation at its local Reynolds number, based on the
    surface run length from the section leading edge to the panel's
    downstream edge.
    """
    return viscous_drag_grid(mesh.grid, conditions, transition_re, mirror=True)


def polar(geometry, conditions, fidelity, settings=None):
    """Lift/drag sweep over the angle-of-attack grid at one fidelity level."""
    settings = settings or HydroSettings()
    lattice = settings.lattice(fidelity)
    vl = VortexLattice(lattice_nodes(geometry.sections, lattice))
    gam = vl.circulation(settings.aoa_deg, conditions.speed)
    lift = vl.lift(gam, conditions)
    d_ind = vl.induced_drag(gam, conditions)
    d_visc = viscous_drag(geometry.mesh, conditions, settings.transition_re)
    return PolarCurve(settings.aoa_deg, lift, d_ind + d_visc, fidelity)


SNAPSHOT_FIELDS = ("strip", "panel")


def pressure_snapshot(geometry, conditions, aoa_deg=8.0, lattice=(20, 10), transition_re=5e5, field="strip"):
    """Distributed loading and lumped forces at one incidence.

    Returns ``(loading, lift, drag)``. With ``field="strip"`` the loading holds
    one sectional coefficient per spanwise strip; with ``field="panel"`` it is
    the panel loading flattened over the whole lattice.
    """
    if field not in SNAPSHOT_FIELDS:
        raise ValueError(f"field must be one of {SNAPSHOT_FIELDS}, got {field!r}")
    vl = VortexLattice(lattice_nodes(geometry.sections, lattice))
    gam = vl.circulation([aoa_deg], conditions.speed)
    lift = float(vl.lift(gam, conditions)[0])
    drag = float(vl.induced_drag(gam, conditions)[0]) + viscous_drag(geometry.mesh, conditions, transition_re)
    if field == "strip":
        return vl.strip_loading(gam[0], conditions), lift, drag
    return vl.delta_cp(gam[0], conditions).ravel(), lift, drag


def max_efficiency(polar_curve):
    """Origin-tangent point of the polar: ``E_max = max L/D`` and its incidence."""
    lift, drag = polar_curve.lift, polar_curve.drag
    if len(lift) == 0 or np.any(drag <= 0):
        raise ValueError("polar needs at least one sample and positive drag")
    if np.all(lift <= 0):
        raise NoPositiveLiftError("no positive lift anywhere on the polar")
    ratio = lift / drag
    k = int(np.argmax(ratio))  # first maximum -> smaller aoa on ties
    return GlideState(E_max=float(ratio[k]), aoa_star=float(polar_curve.aoa[k]))


def glide_closure(lift, drag, conditions):
    """Steady-glide angle and equivalent buoyancy volume for ``(L, D)``.

    Scalars give float fields; arrays are evaluated elementwise.
    """
    lift = np.asarray(lift, dtype=float)
    drag = np.asarray(drag, dtype=float)
    if not np.all(lift > 0):
        raise NoPositiveLiftError(f"glide closure needs L > 0, got min {lift.min()}")
    if not np.all(drag > 0):
        raise ValueError(f"glide closure needs D > 0, got min {drag.min()}")
    gamma = np.arctan(-drag / lift)
    dvb = (-drag * np.sin(gamma) + lift * np.cos(gamma)) / (conditions.density * conditions.gravity)
    if gamma.ndim == 0:
        return GlideState(gamma=float(gamma), delta_Vb=float(dvb))
    return GlideState(gamma=gamma, delta_Vb=dvb)


POLAR_HEADER = ("aoa_deg", "lift_N", "drag_N")


def write_polar_csv(polar_curve, path, meta=None):
    """Polar table; ``meta`` goes into a leading ``# {json}`` comment line."""
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(POLAR_HEADER)
        for row in zip(polar_curve.aoa, polar_curve.lift, polar_curve.drag):
            w.writerow([f"{v:.12g}" for v in row])


def read_polar_csv(path, fidelity=1):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if tuple(rows[0]) != POLAR_HEADER:
        raise ValueError(f"{path}: expected header {','.join(POLAR_HEADER)}")
    data = np.array(rows[1:], dtype=float).reshape(-1, 3)
    return PolarCurve(data[:, 0], data[:, 1], data[:, 2], fidelity)


class ExternalPolarSolver:
    """File-based adapter letting an external flow solver supply polars.

    For each request a case directory ``<root>/<case_id>/`` is created with

    * ``design.txt``   -- one ``name value`` line per design parameter,
    * ``request.json`` -- fidelity, angle grid and flow conditions.

    The solver (``command``, run with the case directory as working dir, or
    any out-of-band process) must write ``polar.csv`` with header
    ``aoa_deg,lift_N,drag_N`` and then touch the ``DONE`` sentinel. A
    ``FAILED`` sentinel marks the evaluation as failed.
    """

    def __init__(self, root, command=None, timeout=3600.0, poll=0.05):
        self.root = Path(root)
        self.command = command
        self.timeout = timeout
        self.poll = poll

    def case_id(self, u, fidelity):
        h = hashlib.sha256(np.asarray(u, dtype=float).tobytes() + bytes([int(fidelity)]))
        return f"case_{h.hexdigest()[:16]}_f{int(fidelity)}"

    def evaluate(self, u, fidelity, conditions, aoa_deg=AOA_GRID_DEG, names=None):
        case = self.root / self.case_id(u, fidelity)
        case.mkdir(parents=True, exist_ok=True)
        names = names or [f"u{k}" for k in range(len(u))]
        (case / "design.txt").write_text("".join(f"{n} {v:.17g}\n" for n, v in zip(names, u)))
        request = {
            "fidelity": int(fidelity),
            "aoa_deg": [float(a) for a in aoa_deg],
            "conditions": {
                "speed": conditions.speed,
                "density": conditions.density,
                "viscosity": conditions.viscosity,
                "gravity": conditions.gravity,
            },
        }
        (case / "request.json").write_text(json.dumps(request, indent=2))
        if self.command:
            subprocess.run(self.command, cwd=case, check=False)
        t0 = time.monotonic()
        while not (case / "DONE").exists():
            if (case / "FAILED").exists():
                raise HydroError(f"external solver reported failure in {case}")
            if time.monotonic() - t0 > self.timeout:
                raise HydroError(f"external solver timed out in {case}")
            time.sleep(self.poll)
        return read_polar_csv(case / "polar.csv", fidelity)
