"""Parametric manta-shaped shell: NACA sections, spanwise loft, closed mesh.

Coordinates: ``x`` streamwise (leading edge to trailing edge), ``y`` spanwise
(the half-body lives at ``y >= 0`` and is mirrored), ``z`` up. Lengths in
metres, angles in radians.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

N_SECTIONS = 4
N_PARAMS = 32
MIN_CHORD = 0.01

SECTION_FIELDS = (
    "camber_max",
    "camber_pos",
    "thickness",
    "chord",
    "le_x",
    "le_y",
    "le_z",
    "twist",
    "roll",
    "yaw",
)

PARAM_NAMES = ("s1_thickness", "s1_chord") + tuple(
    f"s{k}_{name}" for k in (2, 3, 4) for name in SECTION_FIELDS
)


class DomainError(ValueError):
    """A geometric parameter lies outside its admissible range."""

    def __init__(self, field_name, value, message=""):
        self.field = field_name
        self.value = value
        super().__init__(f"{field_name}={value!r} out of range{': ' + message if message else ''}")


class GeometryError(ValueError):
    """The design produces a degenerate or self-intersecting shell."""


@dataclass(frozen=True)
class SectionParams:
    camber_max: float = 0.0
    camber_pos: float = 0.4
    thickness: float = 0.12
    chord: float = 1.0
    leading_edge: tuple = (0.0, 0.0, 0.0)
    twist: float = 0.0
    roll: float = 0.0
    yaw: float = 0.0

    def validate(self, name="section"):
        if not self.chord > 0:
            raise DomainError(f"{name}.chord", self.chord, "must be > 0")
        if not 0.0 <= self.thickness <= 0.5:
            raise DomainError(f"{name}.thickness", self.thickness, "must be in [0, 0.5]")
        if not 0.0 <= self.camber_max <= 0.2:
            raise DomainError(f"{name}.camber_max", self.camber_max, "must be in [0, 0.2]")
        if self.camber_max > 0 and not 0.0 < self.camber_pos < 1.0:
            raise DomainError(f"{name}.camber_pos", self.camber_pos, "must be in (0, 1)")
        return self


@dataclass
class SurfaceMesh:
    """Closed triangulated shell of the full (mirrored) body.

    ``grid`` keeps the structured half-body skin, shape
    ``(spanwise_stations, chordwise_points - 1, 3)``, with the loop ordered
    trailing edge -> upper -> leading edge -> lower.
    """

    points: np.ndarray
    triangles: np.ndarray
    spanwise_stations: int
    chordwise_points: int
    grid: np.ndarray = field(default=None, repr=False)

    @property
    def n_points(self):
        return len(self.points)


def _check_naca(camber_max, camber_pos, thickness):
    if not 0.0 <= thickness <= 0.5:
        raise DomainError("thickness", thickness, "must be in [0, 0.5]")
    if not 0.0 <= camber_max <= 0.2:
        raise DomainError("camber_max", camber_max, "must be in [0, 0.2]")
    if camber_max > 0 and not 0.0 < camber_pos < 1.0:
        raise DomainError("camber_pos", camber_pos, "must be in (0, 1)")


def naca4_half_thickness(xc, thickness):
    """Sharp trailing-edge NACA 4-digit half-thickness at chord fraction ``xc``."""
    xc = np.asarray(xc, dtype=float)
    return 5.0 * thickness * (
        0.2969 * np.sqrt(xc) - 0.1260 * xc - 0.3516 * xc**2 + 0.2843 * xc**3 - 0.1036 * xc**4
    )


def naca4_camber(xc, camber_max, camber_pos):
    """Mean line ordinate and slope of the NACA 4-digit family."""
    xc = np.asarray(xc, dtype=float)
    if camber_max == 0.0:
        return np.zeros_like(xc), np.zeros_like(xc)
    m, p = camber_max, camber_pos
    fore = xc < p
    yc = np.where(fore, m / p**2 * (2 * p * xc - xc**2), m / (1 - p) ** 2 * ((1 - 2 * p) + 2 * p * xc - xc**2))
    dyc = np.where(fore, 2 * m / p**2 * (p - xc), 2 * m / (1 - p) ** 2 * (p - xc))
    return yc, dyc


def naca4_skins(xc, camber_max, camber_pos, thickness):
    """Upper and lower surface points at the chord fractions ``xc``."""
    _check_naca(camber_max, camber_pos, thickness)
    xc = np.asarray(xc, dtype=float)
    yt = naca4_half_thickness(xc, thickness)
    yc, dyc = naca4_camber(xc, camber_max, camber_pos)
    th = np.arctan(dyc)
    upper = np.column_stack([xc - yt * np.sin(th), yc + yt * np.cos(th)])
    lower = np.column_stack([xc + yt * np.sin(th), yc - yt * np.cos(th)])
    return upper, lower


def cosine_spacing(m):
    beta = np.linspace(0.0, np.pi, m)
    return 0.5 * (1.0 - np.cos(beta))


def naca4_profile(camber_max, camber_pos, thickness, n_points=57):
    """Closed NACA 4-digit loop in chord units.

    The loop runs trailing edge -> upper surface -> leading edge -> lower
    surface -> trailing edge, so the first and last points coincide. Chordwise
    abscissae are cosine spaced; ``n_points`` must be odd so that the leading
    edge is a vertex.
    """
    if n_points < 10:
        raise DomainError("n_points", n_points, "need at least 10 points")
    if n_points % 2 == 0:
        raise DomainError("n_points", n_points, "must be odd")
    m = (n_points + 1) // 2
    xc = cosine_spacing(m)
    upper, lower = naca4_skins(xc, camber_max, camber_pos, thickness)
    loop = np.vstack([upper[::-1], lower[1:]])
    # sharp trailing edge: force exact closure
    loop[-1] = loop[0]
    return loop


def build_sections(u):
    """Split a 32-vector into the four section descriptions (root first)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (N_PARAMS,):
        raise ValueError(f"design vector must have {N_PARAMS} entries, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise DomainError(PARAM_NAMES[bad], u[bad], "not finite")
    sections = [SectionParams(thickness=u[0], chord=u[1]).validate("s1")]
    for k in range(3):
        p = u[2 + 10 * k : 12 + 10 * k]
        sec = SectionParams(
            camber_max=p[0],
            camber_pos=p[1],
            thickness=p[2],
            chord=p[3],
            leading_edge=(p[4], p[5], p[6]),
            twist=p[7],
            roll=p[8],
            yaw=p[9],
        )
        sections.append(sec.validate(f"s{k + 2}"))
    return sections


def sections_to_vector(sections):
    """Inverse of :func:`build_sections` (root camber/position/angles dropped)."""
    root = sections[0]
    out = [root.thickness, root.chord]
    for sec in sections[1:]:
        out += [sec.camber_max, sec.camber_pos, sec.thickness, sec.chord, *sec.leading_edge,
                sec.twist, sec.roll, sec.yaw]
    return np.array(out, dtype=float)


def _rotation(twist, roll, yaw):
    # twist about y (positive = nose up), then roll about x, then yaw about z
    ct, st = np.cos(twist), np.sin(twist)
    cr, sr = np.cos(roll), np.sin(roll)
    cy, sy = np.cos(yaw), np.sin(yaw)
    r_twist = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    r_roll = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    r_yaw = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return r_yaw @ r_roll @ r_twist


def place_section(sec, profile):
    """Map a 2-D profile (chord units, ``(n, 2)``) into 3-D for ``sec``."""
    profile = np.asarray(profile, dtype=float)
    local = np.column_stack([profile[:, 0], np.zeros(len(profile)), profile[:, 1]]) * sec.chord
    rot = _rotation(sec.twist, sec.roll, sec.yaw)
    return local @ rot.T + np.asarray(sec.leading_edge, dtype=float)


def _station_params(sections):
    s = np.array([sec.leading_edge[1] for sec in sections], dtype=float)
    if sections[0].leading_edge != (0.0, 0.0, 0.0) or s[0] != 0.0:
        raise GeometryError("root section must sit at the origin")
    if np.any(np.diff(s) <= 0):
        raise GeometryError(f"section spanwise ordinates must strictly increase, got {s}")
    for k, sec in enumerate(sections):
        if sec.chord < MIN_CHORD:
            raise GeometryError(f"section {k + 1} chord {sec.chord:.4g} m below {MIN_CHORD} m")
    return s


def span_stations(s_tip, n):
    """Spanwise stations on ``[0, s_tip]`` clustered toward the tip."""
    t = np.linspace(0.0, 1.0, n)
    s = s_tip * np.sin(0.5 * np.pi * t)
    s[-1] = s_tip
    return s


def span_interpolate(section_points, s_knots, s_eval):
    """Cubic spanwise interpolation of corresponding section points.

    ``section_points`` has shape ``(4, n, 3)``. The spline leaves the symmetry
    plane with zero slope in ``x`` and ``z`` (unit slope in ``y``).
    """
    n = section_points.shape[1]
    d0 = np.zeros((n, 3))
    d0[:, 1] = 1.0
    spline = CubicSpline(s_knots, section_points, axis=0, bc_type=((1, d0), (2, np.zeros((n, 3)))))
    return spline(s_eval)


def _loop_signed_area(loop_xz):
    x, z = loop_xz[:, 0], loop_xz[:, 1]
    return 0.5 * np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z)


def check_loft_grid(grid):
    """Raise :class:`GeometryError` if the surface map folds anywhere.

    Two sampled Jacobian checks on the half-body grid: every station loop keeps
    the orientation of the root loop with non-vanishing area, and every
    chordwise point advances strictly outboard from station to station.
    """
    areas = np.array([_loop_signed_area(g[:, [0, 2]]) for g in grid])
    ref = np.sign(areas[0])
    if ref == 0 or np.any(np.sign(areas) != ref) or np.any(np.abs(areas) < 1e-12):
        raise GeometryError("section loop folds or collapses (non-positive Jacobian)")
    dy = np.diff(grid[:, :, 1], axis=0)
    if np.any(dy <= 0):
        k, j = np.argwhere(dy <= 0)[0]
        raise GeometryError(f"spanwise map folds between stations {k} and {k + 1} at loop point {j}")


def loft_grid(sections, n_span=57, n_chord=57):
    """Structured half-body skin, shape ``(n_span, n_chord - 1, 3)``."""
    s_knots = _station_params(sections)
    loops = []
    for sec in sections:
        prof = naca4_profile(sec.camber_max, sec.camber_pos, sec.thickness, n_chord)[:-1]
        loops.append(place_section(sec, prof))
    grid = span_interpolate(np.stack(loops), s_knots, span_stations(s_knots[-1], n_span))
    grid[0, :, 1] = 0.0
    return grid


def _tip_cap(ring_idx, n_u):
    # pair upper loop point i with lower point n_u - i (mod n_u)
    half = n_u // 2
    tris = []
    for i in range(half):
        ui, ui1 = ring_idx[i], ring_idx[i + 1]
        li, li1 = ring_idx[(n_u - i) % n_u], ring_idx[(n_u - i - 1) % n_u]
        if ui != li:
            tris.append((ui, li, ui1))
        if ui1 != li1:
            tris.append((ui1, li, li1))
    return tris


def mesh_from_grid(grid):
    """Mirror a half-body grid and close it into a watertight triangle mesh."""
    n_span, n_u, _ = grid.shape
    mirrored = grid[:0:-1].copy()
    mirrored[:, :, 1] *= -1.0
    full = np.concatenate([mirrored, grid], axis=0)
    n_st = full.shape[0]
    points = full.reshape(-1, 3)
    idx = np.arange(n_st * n_u).reshape(n_st, n_u)

    k = np.arange(n_st - 1)[:, None]
    j = np.arange(n_u)[None, :]
    jn = (j + 1) % n_u
    a, b, c, d = idx[k, j], idx[k + 1, j], idx[k + 1, jn], idx[k, jn]
    quads = np.stack([a, b, c, d], axis=-1).reshape(-1, 4)
    tris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])

    left_cap = [(t[0], t[2], t[1]) for t in _tip_cap(idx[0], n_u)]
    right_cap = _tip_cap(idx[-1], n_u)
    tris = np.vstack([tris, np.array(left_cap + right_cap, dtype=np.int64)]).astype(np.int64)

    if _signed_volume(points, tris) < 0:
        tris = tris[:, ::-1].copy()
    return points, tris


def _signed_volume(points, tris):
    p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
    return float(np.einsum("ij,ij->", p0, np.cross(p1, p2)) / 6.0)


def triangle_areas(points, tris):
    p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def loft(sections, n_span=57, n_chord=57):
    """Loft the four sections into a closed, mirrored :class:`SurfaceMesh`."""
    if len(sections) != N_SECTIONS:
        raise ValueError(f"expected {N_SECTIONS} sections, got {len(sections)}")
    if n_span < 3:
        raise ValueError("n_span must be >= 3")
    grid = loft_grid(sections, n_span, n_chord)
    check_loft_grid(grid)
    points, tris = mesh_from_grid(grid)
    if np.any(triangle_areas(points, tris) <= 1e-14):
        raise GeometryError("degenerate (zero-area) triangle in lofted mesh")
    return SurfaceMesh(points, tris, n_span, n_chord, grid)


def is_watertight(mesh):
    """Every edge shared by exactly two triangles with opposite directions."""
    tris = np.asarray(mesh.triangles)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    n = int(tris.max()) + 1 if len(tris) else 0
    directed = e[:, 0] * n + e[:, 1]
    if len(np.unique(directed)) != len(directed):
        return False
    undirected = np.sort(e, axis=1)
    _, counts = np.unique(undirected[:, 0] * n + undirected[:, 1], return_counts=True)
    return bool(np.all(counts == 2))


def enclosed_volume(mesh):
    """Volume by the divergence theorem; positive for outward winding."""
    if not is_watertight(mesh):
        raise GeometryError("mesh is not watertight")
    return _signed_volume(np.asarray(mesh.points, dtype=float), np.asarray(mesh.triangles))


def camber_surface(sections, n_span, n_chord):
    """Lattice nodes on the mean surface, shape ``(n_span + 1, n_chord + 1, 3)``.

    The mean surface is the average of the upper and lower skins at equal
    chord fractions, lofted with the same spanwise spline as the shell.
    Chordwise nodes are uniform in chord fraction.
    """
    s_knots = _station_params(sections)
    xc = np.linspace(0.0, 1.0, n_chord + 1)
    mids = []
    for sec in sections:
        up, lo = naca4_skins(xc, sec.camber_max, sec.camber_pos, sec.thickness)
        mids.append(place_section(sec, 0.5 * (up + lo)))
    nodes = span_interpolate(np.stack(mids), s_knots, span_stations(s_knots[-1], n_span + 1))
    nodes[0, :, 1] = 0.0
    return nodes


@dataclass
class Geometry:
    """Everything downstream needs about one external shape."""

    u: np.ndarray
    sections: list
    mesh: SurfaceMesh
    volume: float

    @property
    def span(self):
        return 2.0 * float(self.mesh.points[:, 1].max())

    @property
    def length(self):
        return float(np.ptp(self.mesh.points[:, 0]))


def build_geometry(u, n_span=57, n_chord=57):
    sections = build_sections(u)
    mesh = loft(sections, n_span, n_chord)
    return Geometry(np.asarray(u, dtype=float).copy(), sections, mesh, enclosed_volume(mesh))


def write_stl(mesh, path, name="glider"):
    points, tris = mesh.points, mesh.triangles
    p0, p1, p2 = points[tris[:, 0]], points[tris[:, 1]], points[tris[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    lines = [f"solid {name}"]
    for n, a, b, c in zip(normals, p0, p1, p2):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for v in (a, b, c):
            lines.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stl_triangles(path):
    """Vertex triples from an ASCII STL written by :func:`write_stl`."""
    verts = [
        [float(v) for v in line.split()[1:4]]
        for line in Path(path).read_text().splitlines()
        if line.strip().startswith("vertex")
    ]
    return np.array(verts).reshape(-1, 3, 3)


def write_point_table(mesh, path):
    """Structured half-body skin as ``x y z`` rows under a dimensions header."""
    grid = mesh.grid
    n_span, n_u, _ = grid.shape
    header = f"# structured half-body skin\n# I={n_u} J={n_span}\n"
    body = "\n".join(f"{x:.9e} {y:.9e} {z:.9e}" for x, y, z in grid.reshape(-1, 3))
    Path(path).write_text(header + body + "\n")


def read_point_table(path):
    lines = Path(path).read_text().splitlines()
    dims = dict(tok.split("=") for tok in lines[1].lstrip("# ").split())
    data = np.loadtxt(lines[2:])
    return data.reshape(int(dims["J"]), int(dims["I"]), 3)


__all__ = [
    "DomainError",
    "GeometryError",
    "SectionParams",
    "SurfaceMesh",
    "Geometry",
    "PARAM_NAMES",
    "naca4_profile",
    "build_sections",
    "loft",
    "enclosed_volume",
    "is_watertight",
    "camber_surface",
    "build_geometry",
    "write_stl",
    "write_point_table",
]
