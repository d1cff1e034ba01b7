"""Command-line entry point: `sphericalize [--config F] [--out D] [--seed N] [--force] <command>`.

Configuration is an INI file with sections [density], [space] and [run];
see README.md for the keys.  Every run copies its configuration into the
output directory next to the JSON reports and CSV tables.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import poincare as pc
from .density import INCONCLUSIVE, DensityFn, Exponential, PowLog, Tabulated, classify
from .errors import ConfigError, SphericalizationError
from .space import build_halfplane, graph_distance, read_graph
from .sphere import _json_default, check_condition_C, check_infinity_balls, sampled_diameter, sphericalize
from .sphere import summary as sphere_summary
from .sphere import write_distance_csv
from .verify import (estimate_uniformity, certificate_fails_A, necessity_radii, necessity_trend, refute_fails_B,
                     sample_pairs, strictly_increasing_toward_zero, verify_bracket_lemmas, verify_doubling_rho,
                     write_curves_csv)

log = logging.getLogger("sphericalization")

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2
VERIFY_TARGETS = ("uniformity", "doubling", "brackets", "poincare", "counterexamples", "all")
DEFAULTS = {
    "density": {"family": "powlog", "alpha": "-2", "beta": "0", "rate": "1", "knots": ""},
    "space": {"builder": "halfplane", "mesh_rel": "0.05", "r_max": "1000", "r_min": "0.01", "path": ""},
    "run": {"sigma": "2", "p": "1", "lambda": "1, 2, 4", "pairs": "200", "balls": "1000",
            "poincare_balls": "150", "curves": "1000", "fields": "suite", "seed": "0", "out": "out",
            "counterexample_r_max": "1e8"},
}


@dataclass
class RunConfig:
    density: DensityFn
    space: dict
    sigma: float
    p: float
    lambdas: list
    pairs: int
    balls: int
    poincare_balls: int
    curves: int
    fields: str
    seed: int
    out: Path
    counterexample_r_max: float
    source: Path | None = None
    raw: configparser.ConfigParser = field(default=None, repr=False)


def _parse_density(sec) -> DensityFn:
    fam = sec.get("family").strip().lower()
    if fam == "powlog":
        return PowLog(sec.getfloat("alpha"), sec.getfloat("beta"))
    if fam in ("exp", "exponential"):
        return Exponential(sec.getfloat("rate"))
    if fam == "tabulated":
        try:
            knots = [tuple(float(x) for x in k.split(":")) for k in sec.get("knots").split(",") if k.strip()]
        except ValueError as e:
            raise ConfigError(f"bad tabulated knots: {e}") from None
        return Tabulated(knots)
    raise ConfigError(f"unknown density family {fam!r}")


def load_config(path=None, seed=None, out=None) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    try:
        d = _parse_density(cp["density"])
        sp = cp["space"]
        space = {"builder": sp.get("builder").strip().lower(), "mesh_rel": sp.getfloat("mesh_rel"),
                 "R_max": sp.getfloat("r_max"), "r_min": sp.getfloat("r_min"), "path": sp.get("path").strip()}
        if space["builder"] not in ("halfplane", "import"):
            raise ConfigError(f"unknown space builder {space['builder']!r}")
        if space["builder"] == "import":
            p = Path(space["path"])
            if not p.is_absolute() and path is not None:
                p = path.parent / p
            if not p.is_file():
                raise ConfigError(f"graph file not found: {p}")
            space["path"] = str(p)
        run = cp["run"]
        cfg = RunConfig(
            density=d, space=space, sigma=run.getfloat("sigma"), p=run.getfloat("p"),
            lambdas=[float(x) for x in run.get("lambda").split(",") if x.strip()],
            pairs=run.getint("pairs"), balls=run.getint("balls"), poincare_balls=run.getint("poincare_balls"),
            curves=run.getint("curves"), fields=run.get("fields").strip().lower(),
            seed=run.getint("seed") if seed is None else int(seed),
            out=Path(run.get("out") if out is None else out),
            counterexample_r_max=run.getfloat("counterexample_r_max"), source=path, raw=cp,
        )
    except (ValueError, KeyError) as e:
        raise ConfigError(f"invalid configuration: {e}") from None
    if cfg.fields not in ("suite", "constant"):
        raise ConfigError("run.fields must be 'suite' or 'constant'")
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _prepare_out(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    with (cfg.out / "config.ini").open("w", encoding="utf-8") as fh:
        cfg.raw["run"]["seed"] = str(cfg.seed)
        cfg.raw.write(fh)
    return cfg.out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, default=_json_default) + "\n", encoding="utf-8")


def _clean(o):
    """Recursively make floats JSON-safe ('inf', 'nan') and tuple keys strings."""
    if isinstance(o, dict):
        return {(k if isinstance(k, str) else str(k)): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        x = float(o)
        if not math.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return x
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _build_view(cfg: RunConfig, force: bool):
    s = cfg.space
    if s["builder"] == "halfplane":
        m = build_halfplane(s["mesh_rel"], s["R_max"], s["r_min"])
    else:
        m = read_graph(s["path"])
    return sphericalize(m, cfg.density, cfg.sigma, force=force, rng=cfg.seed, with_diameter=False)


# ---------------------------------------------------------------------------
# commands


def cmd_check_density(cfg: RunConfig, force: bool = False) -> int:
    out = _prepare_out(cfg)
    rep = classify(cfg.density)
    _write_json(out / "density_report.json", {"density": cfg.density.name, **rep.to_dict()})
    print(f"{cfg.density.name}: A={rep.verdict_A} (C_A_hat={rep.C_A_hat:.4g}), "
          f"B={rep.verdict_B} (C_B_hat={rep.C_B_hat:.4g})")
    return EXIT_INCONCLUSIVE if INCONCLUSIVE in (rep.verdict_A, rep.verdict_B) else EXIT_OK


def cmd_sphericalize(cfg: RunConfig, force: bool = False) -> int:
    out = _prepare_out(cfg)
    v = _build_view(cfg, force)
    v.diam_rho_hat = sampled_diameter(v, rng=cfg.seed)
    m = v.base
    s = sphere_summary(v)
    # spot check of d_rho against d on a few random pairs
    rng = np.random.default_rng(cfg.seed)
    checks = []
    for _ in range(5):
        a, b = (int(x) for x in rng.integers(m.n_nodes, size=2))
        d = float(graph_distance(m, a, b)[0])
        dr = float(graph_distance(m, a, b, weights=v.edge_rho_weight)[0])
        checks.append({"x": a, "y": b, "d": d, "d_rho": dr, "ratio": dr / d if d > 0 else None})
    s["spot_check"] = checks
    _write_json(out / "summary.json", s)
    fields = {"radial": m.radial, "rho": v.node_rho, "mu_rho": v.node_mu_rho_weight,
              "d_rho_inf_lower": v.inf_lower, "d_rho_inf": v.inf_point, "d_rho_inf_upper": v.inf_upper}
    if m.coords.shape[1] >= 2:
        fields = {"x": m.coords[:, 0], "y": m.coords[:, 1], **fields}
    write_distance_csv(out / "distances.csv", fields)
    print(f"{v.density.name}, sigma={v.sigma:g}: diam_rho_hat={v.diam_rho_hat:.6g}, "
          f"mu_rho(X)={v.mu_rho_total:.6g}")
    return EXIT_OK


def _verify_uniformity(cfg, v, out) -> dict:
    pairs = sample_pairs(v.base, cfg.pairs, rng=cfg.seed)
    res = {}
    for tag in ("rho", "d"):
        u = estimate_uniformity(v, pairs, metric_tag=tag)
        res[tag] = u
        _write_rows(out / f"uniformity_{tag}.csv", ("x", "y", "best_functional", "family", "family_limited"),
                    [(e.pair[0], e.pair[1], e.best_functional, e.family, e.family_limited) for e in u.table])
    worst = sorted(res["rho"].table, key=lambda e: -e.best_functional)[:10]
    write_curves_csv(v.base, [e.witness for e in worst], out / "uniformity_worst_curves.csv")
    rep = {tag: {"C_hat": u.C_hat, "n_pairs": len(u.table), "n_family_limited": u.n_family_limited}
           for tag, u in res.items()}
    _write_json(out / "uniformity.json", rep)
    print(f"uniformity: C_hat(rho)={res['rho'].C_hat:.4g}, C_hat(d)={res['d'].C_hat:.4g}")
    return res


def _verify_brackets(cfg, v, out, uni=None) -> list:
    pairs = sample_pairs(v.base, cfg.pairs, rng=cfg.seed)
    if uni is None:
        uni = {"d": estimate_uniformity(v, pairs, metric_tag="d")}
    reps = verify_bracket_lemmas(v, pairs, uni["d"], rng=cfg.seed)
    _write_json(out / "brackets.json", [r.to_dict() for r in reps])
    for r in reps:
        print(f"{r.check}: {r.verdict} (worst ratio {r.worst_ratio:.4g}, n={r.n_samples})")
    return reps


def _verify_doubling(cfg, v, out):
    C, rep = verify_doubling_rho(v, samples=cfg.balls, rng=cfg.seed, min_resolved=cfg.balls)
    cc = check_condition_C(v)
    inf_balls = check_infinity_balls(v)
    _write_json(out / "doubling.json", {
        "C_murho_hat": C, "n_balls": rep.n_balls, "n_resolved": rep.n_resolved,
        "per_stratum": rep.per_stratum, "third_case_range": rep.third_case_range,
        "inclusions": rep.inclusions.to_dict(),
        "inclusions_extended": rep.inclusions_extended.to_dict() if rep.inclusions_extended else None,
        "infinity_trend": rep.infinity_trend,
        "condition_C": {"verdict": cc.verdict, "C_C_hat": cc.C_C_hat, "two_sided_holds": cc.two_sided_holds},
        "infinity_balls": [{"r": b.r, "holds": b.holds, "applicable": b.applicable, "n_ball": b.n_ball}
                           for b in inf_balls],
    })
    _write_rows(out / "doubling.csv", ("center", "radius", "stratum", "ratio", "n_inner", "resolved", "third_case"),
                [(s.center, s.radius, s.stratum, s.ratio, s.n_inner, s.resolved, s.third_case) for s in rep.samples])
    print(f"doubling: C_murho_hat={C:.4g} over {rep.n_resolved} resolved balls; "
          f"inclusions {rep.inclusions.verdict}; condition C {cc.verdict}")
    return rep


def _verify_poincare(cfg, v, out) -> dict:
    m = v.base
    fields = pc.field_suite(m, seed=cfg.seed) if cfg.fields == "suite" else [
        pc.ScalarField(np.ones(m.n_nodes), "constant")]
    sweeps = {}
    rows = []
    for lam in cfg.lambdas:
        sw = pc.poincare_sweep(v, p=cfg.p, lam=lam, fields=fields, n_balls=cfg.poincare_balls, rng=cfg.seed)
        sweeps[lam] = sw
        for s in sw.samples:
            rows.append((s.center, s.radius, s.metric_tag, s.field_tag, s.p, s.lam, s.lhs, s.rhs, s.ratio))
    _write_rows(out / "poincare.csv", pc.CSV_FIELDS, rows)
    curves = pc.random_walk_curves(m, cfg.curves, rng=cfg.seed)
    g = np.abs(fields[-1].values) + 1.0
    ti = pc.transform_identity_check(v, curves, g)
    ug = [pc.ug_transform_check(v, u) for u in fields[:3]]
    rep = {
        "suite_version": pc.SUITE_VERSION,
        "fields": [u.tag for u in fields],
        "sweeps": {str(lam): sw.to_dict() for lam, sw in sweeps.items()},
        "transform_identity": {"worst_rel_error": ti.worst_rel_error, "mean_rel_error": ti.mean_rel_error,
                               "n_curves": ti.n_curves, "tolerance": 10 * m.mesh_rel},
        "ug_transform": [{"field": r.field_tag, "holds": r.holds, "worst_excess_rho_to_d": r.worst_excess_rho_to_d,
                          "worst_excess_d_to_rho": r.worst_excess_d_to_rho,
                          "lp_rel_errors": {f"p={k[0]:g},sigma={k[1]:g}": e for k, e in r.lp_rel_errors.items()}}
                         for r in ug],
    }
    _write_json(out / "poincare.json", rep)
    for lam, sw in sweeps.items():
        print(f"poincare lambda={lam:g}: C_P_hat={sw.C_P_hat}, preservation factor={sw.preservation_factor}")
    return rep


def _verify_counterexamples(cfg, out) -> dict:
    Cs = (1, 2, 4, 8, 16)
    fa = [certificate_fails_A(Exponential(1.0), C) for C in Cs]
    fb = refute_fails_B(PowLog(-1.0, -2.0), Cs)
    f = PowLog(-2.0, -2.0)
    m = build_halfplane(cfg.space["mesh_rel"], cfg.counterexample_r_max, cfg.space["r_min"])
    v = sphericalize(m, f, 1.0, with_diameter=False)
    cc = check_condition_C(v)
    trend = necessity_trend(v, necessity_radii(v))
    ann = [(p.r, p.annulus_ratio) for p in trend if math.isfinite(p.annulus_ratio)]
    wit = [(p.r, p.witness_ratio) for p in trend if p.witness_ratio is not None]
    rep = {
        "fails_A": {"density": "Exponential(1)", "verdict": "refuted" if all(c.refuted for c in fa) else "inconclusive",
                    "certificates": [{"C": c.C, "r": c.r, "cone_margin": c.cone_margin,
                                      "quasiconvexity_margin": c.quasiconvexity_margin, "refuted": c.refuted}
                                     for c in fa]},
        "fails_B": {"density": "PowLog(-1, -2)",
                    "verdict": "refuted" if all(c is not None for c in fb) else "inconclusive",
                    "certificates": [{"C": C, "R1": c.R1, "r": c.r, "R2": c.R2, "value": c.value} if c else
                                     {"C": C, "value": None} for C, c in zip(Cs, fb)]},
        "fails_C": {"density": "PowLog(-2, -2)", "sigma": 1.0, "R_max": m.R_max, "condition_C": cc.verdict,
                    "C_C_hat": cc.C_C_hat,
                    "verdict": "violated" if strictly_increasing_toward_zero(ann) else "inconclusive",
                    "annulus_ratio_increasing_as_r_decreases": strictly_increasing_toward_zero(ann),
                    "witness_ratio_increasing_as_r_decreases": strictly_increasing_toward_zero(wit),
                    "trend": [{"r": p.r, "ball_ratio": p.ball_ratio, "annulus_ratio": p.annulus_ratio,
                               "witness_ratio": p.witness_ratio} for p in trend]},
    }
    _write_json(out / "counterexamples.json", rep)
    for k in ("fails_A", "fails_B", "fails_C"):
        print(f"{k}: {rep[k]['verdict']}")
    return rep


def cmd_verify(cfg: RunConfig, which: str, force: bool = False) -> int:
    if which not in VERIFY_TARGETS:
        raise ConfigError(f"unknown verify target {which!r}")
    out = _prepare_out(cfg)
    t0 = time.perf_counter()
    if which in ("counterexamples", "all"):
        _verify_counterexamples(cfg, out)
    if which != "counterexamples":
        v = _build_view(cfg, force)
        v.diam_rho_hat = sampled_diameter(v, rng=cfg.seed)
        uni = None
        if which in ("uniformity", "all"):
            uni = _verify_uniformity(cfg, v, out)
        if which in ("brackets", "all"):
            _verify_brackets(cfg, v, out, uni)
        if which in ("doubling", "all"):
            _verify_doubling(cfg, v, out)
        if which in ("poincare", "all"):
            _verify_poincare(cfg, v, out)
    log.info("verify %s finished in %.1f s", which, time.perf_counter() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--force", action="store_true", default=argparse.SUPPRESS,
                        help="sphericalize even if the density fails (A) or (B)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="sphericalize", parents=[common],
                                description="Sphericalization of unbounded metric measure spaces.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check-density", parents=[common], help="classify the density against (A) and (B)")
    sub.add_parser("sphericalize", parents=[common], help="build the sphericalized view and write its summary")
    pv = sub.add_parser("verify", parents=[common], help="run numerical checks")
    pv.add_argument("which", choices=VERIFY_TARGETS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = vars(args)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(message)s")
    force = bool(opts.get("force", False))
    try:
        cfg = load_config(opts.get("config"), opts.get("seed"), opts.get("out"))
        if args.command == "check-density":
            return cmd_check_density(cfg, force)
        if args.command == "sphericalize":
            return cmd_sphericalize(cfg, force)
        return cmd_verify(cfg, args.which, force)
    except (SphericalizationError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
