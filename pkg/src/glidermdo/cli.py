"""Command-line pipeline.

Stages run in order ``sample -> reduce -> train -> optimize -> report``;
``size``, ``polar`` and ``predict`` are standalone. Every artifact carries
the hash of the config entries its stage depends on, and a stage refuses
inputs whose hash no longer matches the current config.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation, hydro, optimizer, reduction, sizing, surrogate
from .config import ConfigError, default_config_path, load_config, load_design_space
from .geometry import GeometryError, build_geometry

log = logging.getLogger("glidermdo")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

# config entries each stage's artifacts depend on
SAMPLE_KEYS = ("run.seed", "flow", "geometry", "hydro", "reduction.ensemble_size", "reduction.field")
REDUCE_KEYS = SAMPLE_KEYS + ("reduction",)
TRAIN_KEYS = REDUCE_KEYS + (
    "budget",
    "sizing",
    "surrogate",
    "optimizer.n_lf",
    "optimizer.n_hf",
    "optimizer.log_weight",
)
OPTIMIZE_KEYS = TRAIN_KEYS + ("optimizer",)
SIZE_KEYS = ("run.seed", "flow", "budget", "geometry", "hydro", "sizing")
POLAR_KEYS = ("flow", "geometry", "hydro")
STAGE_KEYS = {
    "sample": SAMPLE_KEYS,
    "reduce": REDUCE_KEYS,
    "train": TRAIN_KEYS,
    "optimize": OPTIMIZE_KEYS,
    "size": SIZE_KEYS,
    "polar": POLAR_KEYS,
}

ENSEMBLE = "ensemble.csv"
SAMPLE_FAILURES = "sample_failures.csv"
EMBEDDING = "embedding.json"
RETENTION = "retention.csv"
TRAINING = "training.csv"
SURROGATES = "surrogates.json"
FINAL_SURROGATES = "surrogates_final.json"
OPT_REPORT = "optimize_report.json"
ARCHIVE = "archive.csv"
MANIFEST = "manifest.json"


class ValidationFailure(Exception):
    """Bad input, missing upstream artifact or stale config hash (exit 2)."""


class NumericalFailure(Exception):
    """A computation could not produce a usable result (exit 3)."""


@dataclass
class Context:
    cfg: object
    space: object
    out: Path
    threads: int

    def stage_hash(self, stage):
        h = hashlib.sha256(self.cfg.hash(STAGE_KEYS[stage]).encode())
        h.update(self.space.digest().encode())  # design space file contents, not just its path
        return h.hexdigest()[:16]

    def meta(self, stage, **extra):
        return {"stage": stage, "config_hash": self.stage_hash(stage), **extra}

    def path(self, name):
        return self.out / name

    def evaluator(self):
        return evaluation.GliderEvaluator.from_config(self.cfg)


# ---------------------------------------------------------------- artifact io


def _require(path):
    if not Path(path).is_file():
        raise ValidationFailure(f"missing input artifact {path}; run the producing stage first")
    return Path(path)


def _check_hash(ctx, found, stage, path):
    expected = ctx.stage_hash(stage)
    if found != expected:
        raise ValidationFailure(
            f"{path} was produced with config hash {found!r}, current config gives {expected!r} "
            f"for stage '{stage}'; rerun '{stage}'"
        )


def _read_json(path):
    with open(_require(path)) as fh:
        return json.load(fh)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v))


def load_embedding(ctx):
    path = ctx.path(EMBEDDING)
    d = _read_json(path)
    _check_hash(ctx, d.get("meta", {}).get("config_hash"), "reduce", path)
    return reduction.Embedding.from_dict(d)


def write_training(path, state, meta):
    n_x = len(state.X[1][0]) if state.X[1] else len(state.failures[0]["x"])
    with open(path, "w", newline="") as fh:
        optimizer.write_meta_line(fh, meta)
        w = csv.writer(fh)
        w.writerow(["fidelity", "ok"] + [f"x{j}" for j in range(n_x)] + ["f1", "f2", "cost", "error"])
        for lev in (1, 2):
            for x, f, c in zip(state.X[lev], state.F[lev], state.costs[lev]):
                w.writerow([lev, 1] + [_fmt(v) for v in x] + [_fmt(f[0]), _fmt(f[1]), _fmt(c), ""])
        for fail in state.failures:
            w.writerow([fail["fidelity"], 0] + [_fmt(v) for v in fail["x"]] + ["nan", "nan", "0.0", fail.get("error", "")])


def read_training(path):
    """``(state, meta)`` from a table written by :func:`write_training`."""
    meta = optimizer.read_meta_line(_require(path))
    state = optimizer.LoopState()
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, rows = rows[0], rows[1:]
    n_x = sum(1 for h in header if h.startswith("x"))
    for r in rows:
        lev, ok = int(r[0]), r[1] == "1"
        x = np.array(r[2 : 2 + n_x], dtype=float)
        if ok:
            state.X[lev].append(x)
            state.F[lev].append(np.array(r[2 + n_x : 4 + n_x], dtype=float))
            state.costs[lev].append(float(r[4 + n_x]))
        else:
            state.failures.append({"iteration": 0, "fidelity": lev, "x": x.tolist(), "error": r[5 + n_x]})
    return state, meta


def _surrogate_payload(models, meta, bounds):
    return {**meta, "bounds": np.asarray(bounds).tolist(), "models": [m.to_dict() for m in models]}


def _write_table(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        optimizer.write_meta_line(fh, meta)
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_table(path):
    """``(header, rows, meta)`` of a CSV artifact; rows stay strings."""
    meta = optimizer.read_meta_line(_require(path))
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return rows[0], rows[1:], meta


def _read_design(ctx, args):
    """Design vector from ``--design`` (JSON list or ``{"u": [...]}``), else the baseline."""
    if not getattr(args, "design", None):
        return ctx.space.baseline.copy(), "baseline"
    d = _read_json(args.design)
    u = np.asarray(d["u"] if isinstance(d, dict) else d, dtype=float)
    if u.shape != ctx.space.lower.shape:
        raise ValidationFailure(f"--design needs {len(ctx.space.lower)} values, got {u.size}")
    return u, str(args.design)


# ---------------------------------------------------------------- subcommands


def cmd_sample(ctx, args):
    """Coarse physics snapshots on a Sobol ensemble over the full design box."""
    red = ctx.cfg["reduction"]
    ens = evaluation.sample_ensemble(ctx.evaluator(), ctx.space, red["ensemble_size"], ctx.cfg.seed, ctx.threads)
    failed = np.flatnonzero(~ens.ok)
    rows = [[int(ens.index[i])] + [_fmt(v) for v in ens.U[i]] for i in failed]
    _write_table(ctx.path(SAMPLE_FAILURES), ["index", *ctx.space.names], rows, ctx.meta("sample"))
    rate = len(failed) / len(ens)
    log.info("sample: %d attempted, %d failed (%.1f%%)", len(ens), len(failed), 100 * rate)
    if rate > red["max_failure_rate"]:
        raise NumericalFailure(
            f"{len(failed)} of {len(ens)} ensemble evaluations failed ({100 * rate:.1f}%), above the "
            f"{100 * red['max_failure_rate']:.0f}% limit; failing designs listed in {ctx.path(SAMPLE_FAILURES)}"
        )
    kept = ens.subset(ens.ok)
    meta = ctx.meta("sample", n_attempted=len(ens), n_failed=len(failed))
    reduction.write_ensemble_csv(kept, ctx.path(ENSEMBLE), ctx.space.names, meta)
    return {"ensemble": ENSEMBLE, "failures": SAMPLE_FAILURES}


def cmd_reduce(ctx, args):
    """Physics-augmented embedding of the sampled ensemble."""
    ens, meta = reduction.read_ensemble_csv(_require(ctx.path(ENSEMBLE)))
    _check_hash(ctx, meta.get("config_hash"), "sample", ctx.path(ENSEMBLE))
    red = ctx.cfg["reduction"]
    emb = reduction.build_embedding(ens, red["eta"], ctx.space.lower, ctx.space.upper, red["fence"], red["expand"])
    emb.meta.update(ctx.meta("reduce"))
    emb.save(ctx.path(EMBEDDING))
    curve = emb.retention_curve()
    rows = [[k + 1, _fmt(lam), _fmt(c)] for k, (lam, c) in enumerate(zip(emb.spectrum, curve))]
    _write_table(ctx.path(RETENTION), ["mode", "eigenvalue", "retained"], rows, ctx.meta("reduce", n_modes=emb.n_modes))
    log.info("reduce: %d of %d designs kept, %d modes retain %.4f", emb.meta["n_kept"], len(ens), emb.n_modes, emb.eta_retained)
    return {"embedding": EMBEDDING, "retention": RETENTION}


def cmd_train(ctx, args):
    """Initial nested Sobol design at both fidelities and the first surrogates."""
    emb = load_embedding(ctx)
    lc = evaluation.loop_config(ctx.cfg)
    problem = evaluation.ReducedProblem(ctx.evaluator(), emb, ctx.threads)
    X_lf, X_hf = optimizer.initial_design(emb.x_bounds, lc)
    xs = list(X_lf) + list(X_hf)
    levels = [1] * len(X_lf) + [2] * len(X_hf)
    state = optimizer.LoopState()
    for x, lev, res in zip(xs, levels, problem.evaluate_batch(xs, levels)):
        if res.ok and np.all(np.isfinite(res.f)):
            state.X[lev].append(np.asarray(x))
            state.F[lev].append(np.asarray(res.f))
            state.costs[lev].append(res.cost)
        else:
            state.failures.append({"iteration": 0, "fidelity": lev, "x": list(map(float, x)), **res.info})
    meta = ctx.meta("train", n_modes=emb.n_modes)
    write_training(ctx.path(TRAINING), state, meta)
    c = state.counts()
    log.info("train: %d LF / %d HF evaluations, %d failed", c[1], c[2], len(state.failures))
    if len(state.F[1]) < emb.n_modes + 2:
        raise NumericalFailure(f"only {len(state.F[1])} successful low-fidelity evaluations; too few to train")
    models = optimizer.train_surrogates(state, emb.x_bounds, lc)
    _write_json(ctx.path(SURROGATES), _surrogate_payload(models, meta, emb.x_bounds))
    return {"training": TRAINING, "surrogates": SURROGATES}


def _archive_rows(history):
    rows = []
    for arch in history:
        for f, x in zip(arch.points, arch.X):
            rows.append([arch.iteration, _fmt(f[0]), _fmt(f[1])] + [_fmt(v) for v in x])
    return rows


def cmd_optimize(ctx, args):
    """Batch active-learning loop starting from the trained initial design."""
    emb = load_embedding(ctx)
    initial, meta = read_training(ctx.path(TRAINING))
    _check_hash(ctx, meta.get("config_hash"), "train", ctx.path(TRAINING))
    lc = evaluation.loop_config(ctx.cfg)
    evaluator = ctx.evaluator()
    problem = evaluation.ReducedProblem(evaluator, emb, ctx.threads)
    out_meta = ctx.meta("optimize")
    history, state = optimizer.run_loop(problem, lc, ctx.out, log.info, initial, out_meta)
    n_x = emb.n_modes
    _write_table(
        ctx.path(ARCHIVE),
        ["iteration", "f1", "f2"] + [f"x{j}" for j in range(n_x)],
        _archive_rows(history),
        out_meta,
    )
    _write_json(ctx.path(FINAL_SURROGATES), _surrogate_payload(state.surrogates, out_meta, emb.x_bounds))
    report = optimizer.loop_report(history, state)
    base = evaluation.baseline_objectives(evaluator, ctx.space, fidelity=2)
    report["baseline"] = {"ok": base.ok, "objectives": base.objectives.tolist()}
    report["baseline_dominated"] = bool(
        base.ok and any(optimizer.dominates(f, base.objectives) for f in history[-1].points)
    )
    report["final_front_designs"] = [reduction.back_map(emb, x).tolist() for x in history[-1].X]
    _write_json(ctx.path(OPT_REPORT), {**out_meta, **report})
    log.info(
        "optimize: stop %s after %d iterations, final max normalized uncertainty %.4f",
        state.stop_reason,
        state.iteration,
        state.final_uncertainty,
    )
    return {"report": OPT_REPORT, "archive": ARCHIVE, "surrogates": FINAL_SURROGATES}


def cmd_size(ctx, args):
    """Lower-level sizing of one design (the baseline unless ``--design``)."""
    u, source = _read_design(ctx, args)
    ev = ctx.evaluator()
    geo = ev.geometry(u)
    _, peak, glide, _ = ev.hydrodynamics(geo, args.fidelity)
    sol = sizing.solve_sizing(geo.volume, geo.mesh.points, glide.delta_Vb, ev.budget, ev.pso)
    out = {
        **ctx.meta("size"),
        "design": source,
        "fidelity": args.fidelity,
        "volume": geo.volume,
        "E_max": peak.E_max,
        "aoa_star": peak.aoa_star,
        "delta_Vb": glide.delta_Vb,
        **sol.to_dict(include_trace=args.trace),
    }
    name = args.name or "sizing.json"
    _write_json(ctx.path(name), out)
    log.info("size: W*_empty %.4f N, feasible %s", sol.W_empty_star, sol.feasible)
    if not sol.feasible:
        raise NumericalFailure(f"no feasible sizing found; max violations {sol.max_violation}")
    return {"sizing": name}


def cmd_polar(ctx, args):
    """Polars of one design (the baseline unless ``--design``) at both fidelities."""
    u, source = _read_design(ctx, args)
    ev = ctx.evaluator()
    geo = ev.geometry(u)
    written = {}
    for fid in (1, 2):
        pol = hydro.polar(geo, ev.conditions, fid, ev.hydro_settings)
        name = f"polar_fidelity{fid}.csv"
        hydro.write_polar_csv(pol, ctx.path(name), ctx.meta("polar", design=source, fidelity=fid))
        peak = hydro.max_efficiency(pol)
        log.info("polar fidelity %d: E_max %.3f at %.0f deg", fid, peak.E_max, peak.aoa_star)
        written[f"fidelity{fid}"] = name
    return written


def cmd_report(ctx, args):
    """Plot-ready tables: front ellipses, archive fronts, polar overlay, retention curve."""
    emb = load_embedding(ctx)
    rep = _read_json(ctx.path(OPT_REPORT))
    _check_hash(ctx, rep.get("config_hash"), "optimize", ctx.path(OPT_REPORT))
    meta = ctx.meta("optimize", source="report")
    written = {}
    # predicted fronts: ellipse centre plus semi-axes equal to the predicted uncertainty
    for t in range(1, rep["iterations"] + 1):
        path = ctx.path(f"pareto_iter_{t}.csv")
        if not path.is_file():
            continue
        header, rows, _ = read_table(path)
        col = {h: k for k, h in enumerate(header)}
        out_rows = [
            [r[col["f1"]], r[col["f2"]], r[col["sigma1"]], r[col["sigma2"]], r[col["cluster"]], r[col["fidelity"]]]
            for r in rows
        ]
        name = f"ellipses_iter_{t}.csv"
        _write_table(ctx.path(name), ["f1", "f2", "axis1", "axis2", "cluster", "fidelity"], out_rows, meta)
        written[name] = len(out_rows)
    header, rows, _ = read_table(ctx.path(ARCHIVE))
    for t in sorted({int(r[0]) for r in rows}):
        sub = [r[1:3] for r in rows if int(r[0]) == t]
        name = f"front_iter_{t}.csv"
        _write_table(ctx.path(name), ["f1", "f2"], sub, meta)
        written[name] = len(sub)
    # polar overlay: baseline against every final-front design at fine fidelity
    ev = ctx.evaluator()
    designs = [("baseline", ctx.space.baseline)] + [
        (f"front_{k}", np.asarray(u)) for k, u in enumerate(rep["final_front_designs"])
    ]
    overlay = []
    for label, u in designs:
        try:
            pol = hydro.polar(build_geometry(u, ev.n_span, ev.n_chord), ev.conditions, 2, ev.hydro_settings)
        except (ValueError, hydro.HydroError) as exc:
            log.warning("polar overlay: %s skipped (%s)", label, exc)
            continue
        for a, lift, drag in zip(pol.aoa, pol.lift, pol.drag):
            overlay.append([label, _fmt(a), _fmt(lift), _fmt(drag), _fmt(lift / drag)])
    _write_table(ctx.path("polar_overlay.csv"), ["design", "aoa_deg", "lift_N", "drag_N", "L_over_D"], overlay, meta)
    written["polar_overlay.csv"] = len(overlay)
    curve = emb.retention_curve()
    rows = [[k + 1, _fmt(c), int(k < emb.n_modes)] for k, c in enumerate(curve)]
    _write_table(ctx.path("retention_curve.csv"), ["modes", "retained", "kept"], rows, meta)
    written["retention_curve.csv"] = len(rows)
    return written


def cmd_predict(ctx, args):
    """Batch surrogate scoring of reduced-coordinate designs from a CSV."""
    path = Path(args.model) if args.model else ctx.path(FINAL_SURROGATES)
    if not args.model and not path.is_file():
        path = ctx.path(SURROGATES)
    payload = _read_json(path)
    _check_hash(ctx, payload.get("config_hash"), payload.get("stage", "train"), path)
    models = [surrogate.surrogate_from_dict(d) for d in payload["models"]]
    header, rows, _ = read_table(args.input)
    cols = [k for k, h in enumerate(header) if h.startswith("x")]
    n_x = len(payload["bounds"])
    if len(cols) != n_x:
        raise ValidationFailure(f"{args.input}: expected {n_x} columns x0..x{n_x - 1}, found {len(cols)}")
    try:
        X = np.array([[float(r[k]) for k in cols] for r in rows], dtype=float).reshape(-1, n_x)
    except ValueError as exc:
        raise ValidationFailure(f"{args.input}: {exc}") from exc
    preds = [m.predict(X) for m in models]
    out_rows = [
        [_fmt(v) for v in X[i]] + [_fmt(preds[0][0][i]), _fmt(preds[0][1][i]), _fmt(preds[1][0][i]), _fmt(preds[1][1][i])]
        for i in range(len(X))
    ]
    name = args.output or "predictions.csv"
    _write_table(
        ctx.path(name),
        [f"x{j}" for j in range(n_x)] + ["f1", "U1", "f2", "U2"],
        out_rows,
        {"stage": "predict", "config_hash": payload["config_hash"], "model": str(path)},
    )
    return {"predictions": name}


COMMANDS = {
    "sample": cmd_sample,
    "reduce": cmd_reduce,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "size": cmd_size,
    "polar": cmd_polar,
    "report": cmd_report,
    "predict": cmd_predict,
}


# ---------------------------------------------------------------- entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config (TOML); default: the packaged desk-scale config")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--threads", type=int, help="worker processes (env GLIDERMDO_THREADS)")
    common.add_argument("--out", help="output directory (env GLIDERMDO_OUTPUT)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = argparse.ArgumentParser(prog="glidermdo", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {name: fn.__doc__.splitlines()[0] for name, fn in COMMANDS.items()}
    parsers = {name: sub.add_parser(name, help=helps[name], description=helps[name], parents=[common]) for name in COMMANDS}
    for name in ("size", "polar"):
        parsers[name].add_argument("--design", help="JSON list of the 32 design parameters (angles in radians)")
    parsers["size"].add_argument("--fidelity", type=int, choices=(1, 2), default=1, help="polar used for the glide closure")
    parsers["size"].add_argument("--trace", action="store_true", help="include the optimizer trace")
    parsers["size"].add_argument("--name", help="output file name inside --out")
    parsers["predict"].add_argument("--input", required=True, help="CSV with columns x0..x{N-1}")
    parsers["predict"].add_argument("--output", help="output file name inside --out")
    parsers["predict"].add_argument("--model", help="surrogate JSON (default: latest in --out)")
    return parser


def _context(args):
    path = args.config or str(default_config_path())
    overrides = {}
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out:
        run["output"] = args.out
    threads = args.threads if args.threads is not None else os.environ.get("GLIDERMDO_THREADS")
    if threads is not None:
        try:
            run["threads"] = int(threads)
        except ValueError as exc:
            raise ConfigError(f"thread count must be an integer, got {threads!r}") from exc
    if run:
        overrides["run"] = run
    cfg = load_config(path, overrides)
    if cfg["run"]["threads"] < 1:
        raise ConfigError("thread count must be >= 1")
    space = load_design_space(cfg["geometry"]["design_space"] or None)
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    return Context(cfg, space, out, int(cfg["run"]["threads"]))


def _update_manifest(ctx, command, written):
    path = ctx.path(MANIFEST)
    manifest = json.loads(path.read_text()) if path.is_file() else {}
    manifest[command] = {"config_hash": ctx.stage_hash(command) if command in STAGE_KEYS else None, "files": written}
    _write_json(path, manifest)


NUMERICAL_ERRORS = (
    NumericalFailure,
    hydro.HydroError,
    optimizer.OptimizerError,
    surrogate.SurrogateError,
    reduction.ReductionError,
    np.linalg.LinAlgError,
    FloatingPointError,
)
VALIDATION_ERRORS = (ValidationFailure, ConfigError, GeometryError, OSError, ValueError, KeyError)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        ctx = _context(args)
        written = COMMANDS[args.command](ctx, args)
        _update_manifest(ctx, args.command, written)
    except NUMERICAL_ERRORS as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_NUMERICAL
    except VALIDATION_ERRORS as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
