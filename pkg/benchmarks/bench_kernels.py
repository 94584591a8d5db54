"""Wall-time comparison of the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py [--repeat N]``. Inputs match the
sizes the pipeline uses: the fine vortex lattice of the baseline design, a
32-hull containment batch over the baseline shell and an EHVI sample batch.
"""

import argparse
import timeit

import numpy as np

from glidermdo import _pykernels, geometry, hydro
from glidermdo.config import load_design_space

try:
    from glidermdo import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases():
    space = load_design_space()
    geo = geometry.build_geometry(space.baseline)
    vl = hydro.VortexLattice(hydro.lattice_nodes(geo.sections, hydro.HydroSettings().lattice(2)))
    rng = np.random.default_rng(0)
    pts = geo.mesh.points
    centers = np.column_stack([rng.uniform(0.3, 0.6, 32), rng.uniform(-0.02, 0.02, 32)])
    axes = rng.uniform(0.05, 0.2, (32, 3))
    front = np.column_stack([np.linspace(0.0, 1.0, 20), np.linspace(1.0, 0.0, 20)])
    samples = rng.uniform(0.0, 1.2, (4096, 2))
    return {
        "aic_matrix (fine lattice)": lambda k: k.aic_matrix(vl.colloc, vl.normals, vl.corners, vl.wake),
        "containment_sum (32 hulls)": lambda k: k.containment_sum(pts, centers, axes, 0.05),
        "hvi_batch (4096 samples)": lambda k: k.hvi_batch(front, np.array([1.1, 1.1]), samples),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"{'kernel':30s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup   max rel diff")
    for name, fn in cases().items():
        times = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for b, k in backends.items()}
        cells = " ".join(f"{1e3 * t:10.2f}ms" for t in times.values())
        if "cython" in times:
            ref, fast = fn(_pykernels), fn(_ckernels)
            diff = float(np.max(np.abs(ref - fast)) / max(np.max(np.abs(ref)), 1e-300))
            print(f"{name:30s} {cells} {times['python'] / times['cython']:8.1f}x   {diff:.1e}")
        else:
            print(f"{name:30s} {cells}   (compiled extension not built)")


if __name__ == "__main__":
    main()
