"""Batch front end: qlab <experiment> --config file --out dir [--threads N] [--seed S].

Each experiment validates its JSON config fully before writing anything
(exit 2 on schema problems), runs the corresponding module pipeline with
fixed seeds, writes CSV/JSON artifacts into the output directory, prints one
PASS/FAIL line per assertion group, and exits 1 if any real assertion
failed.  Known paper-discrepancy audits print as XFAIL and do not flip the
exit code.
"""

import argparse
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import conformal_ops as cops
from . import mobius, moving_plane, radial_blowup, rescale, stereographic
from .grids import RadialField, radial_bilaplacian

EXPERIMENTS = {}


class ConfigError(ValueError):
    pass


def experiment(name):
    def deco(fn):
        EXPERIMENTS[name] = fn
        return fn
    return deco


def _need(cfg, key, kind, pred=None, what=""):
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    val = cfg[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise ConfigError(f"config key {key!r} must be {kind.__name__}")
    if pred is not None and not pred(val):
        raise ConfigError(f"config key {key!r} fails constraint {what}")
    return val


def _opt(cfg, key, default):
    val = cfg.get(key, default)
    if isinstance(default, float) and isinstance(val, int):
        val = float(val)
    if default is not None and not isinstance(val, type(default)):
        raise ConfigError(f"config key {key!r} must be {type(default).__name__}")
    return val


def _dim(cfg):
    return _need(cfg, "n", int, lambda v: v >= 5, "n >= 5")


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _csv_dump(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(c)) if isinstance(c, float) else str(c)
                             for c in row) + "\n")


def load_group(cfg, n):
    """Schottky group from config: a builtin name or explicit sphere data."""
    if "builtin" in cfg:
        name = _need(cfg, "builtin", str)
        if name == "two-generator":
            return mobius.two_generator_group(
                n, separation=_opt(cfg, "separation", 6.0),
                radius=_opt(cfg, "radius", 1.0))
        if name == "cyclic":
            return mobius.cyclic_loxodromic_group(
                n, ratio=_opt(cfg, "ratio", 4.0))
        raise ConfigError(f"unknown builtin group {name!r}")
    spheres = _need(cfg, "spheres", list, lambda s: len(s) >= 2, ">= 2 spheres")
    pairings = _need(cfg, "pairings", list, lambda p: len(p) >= 1, ">= 1 pairing")
    sph = []
    for s in spheres:
        center = np.asarray(_need(s, "center", list), dtype=float)
        if center.shape != (n,):
            raise ConfigError("sphere center has wrong dimension")
        sph.append(mobius.Sphere(center, _need(s, "radius", float,
                                               lambda r: r > 0, "> 0")))
    return mobius.SchottkyGroup(n, sph, [tuple(p) for p in pairings])


# ---------------------------------------------------------------------------


@experiment("bubble-check")
def run_bubble_check(cfg, out, seed, threads):
    n = _dim(cfg)
    lam = _opt(cfg, "lambda", 1.0)
    m = _opt(cfg, "m", 17)
    m_fine = _opt(cfg, "m_fine", 2 * m - 1)
    half = _opt(cfg, "box_halfwidth", 1.0)
    radial_nodes = _opt(cfg, "radial_nodes", 401)
    sample_nodes = _opt(cfg, "sample_nodes", 4000)
    exp = cops.exponents(n)
    U = stereographic.bubble(n, lam)
    K = float(U.K)
    q = float(exp.q)

    r_window = 2.0 / lam
    prof = RadialField.from_profile(
        lambda r: U(np.stack([r] + [np.zeros_like(r)] * (n - 1), axis=-1)),
        r_window, radial_nodes)
    bl = radial_bilaplacian(prof, n)
    bilap0 = float(bl.values[0])
    bilap_target = K * float(U(np.zeros(n))) ** q
    q0 = bilap0 / float(U(np.zeros(n))) ** q
    rel_bilap = abs(bilap0 - bilap_target) / bilap_target
    rel_q = abs(q0 - K) / K

    rng = np.random.default_rng(seed)

    def sampled_residual(mm):
        h = 2.0 * half / (mm - 1)
        idx = rng.integers(4, mm - 4, size=(sample_nodes, n))
        pts = -half + np.unique(idx, axis=0) * h
        return cops.sampled_equation_residual(
            U, lambda x: K * U(x) ** q, n, h, pts)

    r_coarse = sampled_residual(m)
    r_fine = sampled_residual(m_fine)
    order = math.log(r_coarse / r_fine) / math.log((m_fine - 1) / (m - 1))

    checks = [
        ("radial-bilaplacian", rel_bilap < 1e-6,
         f"(-lap)^2 U(0) = {bilap0!r} vs {bilap_target!r} (rel {rel_bilap:.3e})"),
        ("radial-q-curvature", rel_q < 1e-6,
         f"Q = {q0!r} vs K_n = {K!r} (rel {rel_q:.3e})"),
        ("grid-residual", r_coarse < 1e-2,
         f"relative residual {r_coarse:.3e} at m = {m}"),
        ("convergence-order", order >= 2.0,
         f"order {order:.2f} from m = {m} to {m_fine}"),
    ]
    _json_dump({"n": n, "lambda": lam, "bilaplacian_at_0": bilap0,
                "q_at_0": q0, "equation_constant": K,
                "grid_residual": {"m": m, "value": r_coarse},
                "grid_residual_fine": {"m": m_fine, "value": r_fine},
                "convergence_order": order},
               os.path.join(out, "bubble_check.json"))
    return checks


@experiment("q-audit")
def run_q_audit(cfg, out, seed, threads):
    n = _dim(cfg)
    data = cops.round_sphere_data(n)
    printed = cops.q_curvature_tensorial(data, n, "as-printed")
    consistent = cops.q_curvature_tensorial(data, n, "covariance-consistent")
    K = cops.equation_constant(n)
    checks = [
        ("covariance-mode-matches-flat", consistent == K,
         f"covariance-consistent Q = {consistent} == K_n = {K}"),
    ]
    if n == 6:
        checks.append(("as-printed-value", printed == Fraction(21, 4),
                       f"as-printed Q = {printed} = {float(printed)}"))
    checks.append(("xfail:as-printed-matches-covariance",
                   printed == consistent,
                   f"as-printed {float(printed)} vs covariance "
                   f"{float(consistent)} (known coefficient discrepancy)"))
    _json_dump({"n": n,
                "as_printed": {"fraction": str(printed), "value": float(printed)},
                "covariance_consistent": {"fraction": str(consistent),
                                          "value": float(consistent)},
                "flat_reduction_constant": {"fraction": str(K), "value": float(K)}},
               os.path.join(out, "q_audit.json"))
    return checks


@experiment("radial-blowup")
def run_radial_blowup(cfg, out, seed, threads):
    n = _dim(cfg)
    u0 = _need(cfg, "u0", float, lambda v: v < 0, "u0 < 0")
    k_max = _opt(cfg, "k_max", 3)
    r_max = _opt(cfg, "r_max", 6.0)
    nodes = _opt(cfg, "nodes", 8193)
    radii = np.linspace(0.0, r_max, nodes)
    cert, sims = radial_blowup.certificate_simulation(n, u0, k_max, radii)
    final = sims[-1]
    with np.errstate(divide="ignore"):
        logr = np.log(radii)

    quad_ok = bool(np.all(final.wbar.values >= (-u0) / (2 * n) * radii ** 2
                          - 1e-12 * np.maximum(radii ** 2, 1.0)))
    mono_ok = bool(np.all(np.diff(final.ubar.values) <= 1e-12))
    bound_ok, worst = True, -np.inf
    for k in range(1, min(3, k_max) + 1):
        ent = cert.entries[k]
        wv = sims[k - 1].wbar.values
        pos = wv > 0
        viol = np.max(ent.log_coeff + float(ent.sigma) * logr[pos] - np.log(wv[pos]))
        worst = max(worst, viol)
        bound_ok &= bool(viol < 1e-9)
    div_ok = math.isfinite(cert.divergence_radius)

    rows = []
    for i, r in enumerate(radii):
        row = [r, final.wbar.values[i], final.ubar.values[i]]
        for k in (1, 2, 3):
            if k <= k_max:
                row.append(float(cert.bound(k, r)) if r > 0 else 0.0)
            else:
                row.append(0.0)
        rows.append(row)
    _csv_dump(os.path.join(out, "radial_blowup.csv"),
              ["r", "wbar", "ubar", "bound_k1", "bound_k2", "bound_k3"], rows)
    _json_dump({"n": n, "u0": u0, "q": str(cert.q),
                "entries": [{"k": e.k, "sigma": str(e.sigma),
                             "log_coeff": e.log_coeff, "coeff": e.coeff,
                             "log_coeff_product_form": e.log_coeff_product}
                            for e in cert.entries],
                "c1": cert.c1, "c2": cert.c2,
                "log_c1": cert.log_c1, "log_c2": cert.log_c2,
                "divergence_radius": cert.divergence_radius},
               os.path.join(out, "certificate.json"))
    return [
        ("quadratic-lower-bound", quad_ok, f"wbar >= {-u0}/(2n) r^2 at every node"),
        ("ubar-nonincreasing", mono_ok, "monotone within quadrature tolerance"),
        ("certificate-bounds", bound_ok,
         f"k <= {min(3, k_max)} respected (worst log margin {worst:.3e})"),
        ("divergence-radius", div_ok,
         f"first grid radius with c2 r > 1: {cert.divergence_radius!r}"),
    ]


@experiment("poincare")
def run_poincare(cfg, out, seed, threads):
    n = _dim(cfg)
    group = load_group(_need(cfg, "group", dict), n)
    depth = _opt(cfg, "depth", 10)
    tol = _opt(cfg, "tol", 1e-4)
    scan = mobius.poincare_shell_scan(group, depth)
    est = mobius.estimate_poincare_exponent(group, depth=depth, tol=tol)
    counts = [len(s) for s in scan.shells]
    count_ok = counts == [mobius.word_count(group.rank, k)
                          - (mobius.word_count(group.rank, k - 1) if k else 0)
                          for k in range(depth + 1)]
    sums = scan.shell_sums(est.delta_hat)
    cum = np.cumsum(sums)
    _csv_dump(os.path.join(out, "poincare_shells.csv"),
              ["word_length", "shell_sum", "cumulative"],
              [(k, float(sums[k]), float(cum[k])) for k in range(depth + 1)])
    _json_dump({"n": n, "depth": depth, "delta_hat": est.delta_hat,
                "gate": est.gate, "threshold": est.threshold,
                "ratios": [float(r) for r in est.ratios]},
               os.path.join(out, "poincare.json"))
    return [
        ("word-counts", count_ok, f"shell sizes exact to depth {depth}"),
        ("exponent-gate", est.gate,
         f"delta_hat = {est.delta_hat:.4f} < (n-4)/2 = {est.threshold}"),
    ]


@experiment("orbit-integral")
def run_orbit_integral(cfg, out, seed, threads):
    n = _dim(cfg)
    group = load_group(_need(cfg, "group", dict), n)
    length = _opt(cfg, "length", 2)
    samples = _opt(cfg, "samples", 20000)
    width = _opt(cfg, "field_width", 0.1)

    def v(x):
        return np.exp(-width * np.sum(np.atleast_2d(x) ** 2, axis=-1)).squeeze()

    rep = mobius.orbit_integral(v, group, length, samples=samples, seed=seed,
                                threads=threads)
    worst_z = 0.0
    rows = []
    for wi in rep.words:
        se = math.hypot(wi.direct_se, wi.pulled_se)
        z = abs(wi.direct - wi.pulled) / se if se > 0 else 0.0
        worst_z = max(worst_z, z)
        rows.append(["".join(map(str, wi.word)) or "e", len(wi.word),
                     wi.direct, wi.direct_se, wi.pulled, wi.pulled_se, z])
    _csv_dump(os.path.join(out, "orbit_integral.csv"),
              ["word", "length", "direct", "direct_se", "pulled", "pulled_se",
               "z_score"], rows)
    inc = np.diff(rep.cumulative)
    cauchy_ok = bool(np.all(inc > 0)) and bool(
        np.all(inc[1:] < 0.5 * inc[:-1])) if len(inc) > 1 else True
    _json_dump({"n": n, "length": length, "samples": samples, "seed": seed,
                "shell_sums": {str(k): v for k, v in rep.shell_sums.items()},
                "cumulative": rep.cumulative, "worst_z": worst_z},
               os.path.join(out, "orbit_integral.json"))
    return [
        ("two-sided-agreement", worst_z < 3.0,
         f"worst word z-score {worst_z:.2f} (3 SE gate)"),
        ("partial-sums-cauchy", cauchy_ok,
         "shell increments positive and geometrically shrinking"),
    ]


@experiment("moving-plane")
def run_moving_plane(cfg, out, seed, threads):
    n = _dim(cfg)
    src = _need(cfg, "source", dict)
    kind = _need(src, "kind", str)
    lam_range = tuple(_need(cfg, "lambda_range", list, lambda v: len(v) == 2,
                            "two entries"))
    step = _need(cfg, "step", float, lambda v: v > 0, "> 0")
    eps = _opt(cfg, "eps", 1e-3)
    budget = _opt(cfg, "sample_budget", 256)
    r_check = _opt(cfg, "r_check", 8.0)
    if kind == "bubble":
        c = _opt(src, "center_height", 0.0)
        center = np.zeros(n)
        center[-1] = c
        U = stereographic.bubble(n, _opt(src, "lambda", 1.0), center)
        v, w = U, (lambda x: -U.laplacian(x))
        balls = []
        expect = ("bubble", c)
    elif kind == "automorphic":
        group = load_group(_need(src, "group", dict), n)
        length = _opt(src, "length", 3)
        v = mobius.poincare_chart_field(group, length)
        w = mobius.poincare_chart_field(group, length, weight=(n - 2) / 2.0)
        balls = [(s.center, s.radius) for s in group.spheres]
        if not all(s.center[-1] + s.radius < 0 for s in group.spheres):
            raise ConfigError("automorphic source needs singular balls in x_n < 0")
        expect = ("automorphic", None)
    else:
        raise ConfigError(f"unknown moving-plane source {kind!r}")
    rep = moving_plane.find_lambda_star(
        v, w, n, balls, lam_range, step, eps=eps, sample_budget=budget,
        seed=seed, r_check=r_check)
    _csv_dump(os.path.join(out, "derivative_trace.csv"),
              ["lambda", "max_dv_dxn"], rep.derivative_trace)
    _json_dump({"n": n, "lambda0": rep.lambda0, "lambda_star": rep.lambda_star,
                "symmetric": rep.symmetric,
                "exhausted_below": rep.exhausted_below, "eps": rep.eps,
                "sample_budget": rep.sample_budget},
               os.path.join(out, "moving_plane.json"))
    checks = [("derivative-signs",
               all(d < 0 for _, d in rep.derivative_trace),
               "dv/dx_n < 0 at every tested plane above lambda*")]
    if expect[0] == "bubble":
        err = abs(rep.lambda_star - expect[1])
        checks.append(("lambda-star-recovery", err < 1e-3,
                       f"lambda* = {rep.lambda_star!r} vs center {expect[1]}"))
        checks.append(("symmetric-case", rep.symmetric,
                       "mirror symmetry detected at the critical plane"))
    else:
        checks.append(("lambda-star-nonpositive",
                       rep.lambda_star <= 1e-9 or rep.exhausted_below,
                       f"lambda* = {rep.lambda_star!r}"))
    return checks


@experiment("blowup")
def run_blowup(cfg, out, seed, threads):
    n = _dim(cfg)
    src = _need(cfg, "source", dict)
    if _need(src, "kind", str) != "bubble":
        raise ConfigError("only the bubble source is wired for blowup runs")
    lam = _opt(src, "lambda", 100.0)
    K_window = _opt(cfg, "window_radius", 10.0)
    thresholds = _opt(cfg, "thresholds", {})
    thr_match = float(thresholds.get("match_error", 1e-8))
    thr_resid = float(thresholds.get("residual", 1e-2))
    exp = cops.exponents(n)
    source = stereographic.unit_q_bubble(n, lam)
    job = rescale.rescale_job(source, n, peak=np.zeros(n),
                              peak_value=float(source(np.zeros(n))))
    field = rescale.rescaled_field(job)
    peak_ok = abs(field(np.zeros((1, n)))[0] - 1.0) < 1e-12
    resid = rescale.equation_invariance_check(field, exp, window=1.0, m=17,
                                              nodes=4000, seed=seed)
    lam_fit, center_fit, match_err, rejected = rescale.bubble_match(field, exp)
    matched = stereographic.unit_q_bubble(n, lam_fit, center_fit)
    conv = moving_plane.ball_convexity(matched, np.zeros(n), K_window, exp,
                                       grad=matched.grad)
    _json_dump({"n": n, "source_lambda": lam, "peak_value": job.peak_value,
                "fit": {"lambda": lam_fit, "center": list(center_fit),
                        "match_error": match_err, "rejected": rejected},
                "equation_residual": resid,
                "window_radius": K_window,
                "window_convexity": conv.verdict},
               os.path.join(out, "blowup.json"))
    return [
        ("unit-peak", peak_ok, "rescaled field has value 1 at the origin"),
        ("equation-residual", resid < thr_resid,
         f"residual {resid:.3e} below {thr_resid}"),
        ("bubble-match", match_err < thr_match,
         f"match error {match_err:.3e} below {thr_match}"),
        ("window-concavity", conv.verdict == "concave",
         f"ball of radius {K_window} is {conv.verdict} in the matched metric"),
    ]


@experiment("paneitz-functional")
def run_paneitz(cfg, out, seed, threads):
    n = _dim(cfg)
    half = _opt(cfg, "half_width", 50.0)
    nodes = _opt(cfg, "nodes", 4096)
    exp = cops.exponents(n)
    ub = stereographic.unit_q_bubble(n)

    def profile(r):
        return ub(np.stack([r] + [np.zeros_like(r)] * (n - 1), axis=-1))

    value = cops.paneitz_functional_radial(profile, exp, half, nodes)
    # independent quadrature oracle: round-sphere volume and the scaling law
    from scipy.integrate import quad
    from scipy.special import gamma
    area = 2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0)
    vol, _ = quad(lambda r: r ** (n - 1) * (2.0 / (1.0 + r * r)) ** n, 0.0,
                  np.inf)
    vol *= area
    target = float(cops.equation_constant(n)) * vol ** (4.0 / n)
    rel = abs(value - target) / target
    # the constant-curvature normalization identity: the functional equals
    # the (4/n)-power of the conformal volume when Q == 1
    r = np.linspace(0.0, half, nodes)
    vol_el = profile(r) ** float(exp.p) * r ** (n - 1)
    own_volume = area * np.trapezoid(vol_el, r)
    identity_rel = abs(value - own_volume ** (4.0 / n)) / value
    _json_dump({"n": n, "half_width": half, "nodes": nodes,
                "functional": float(value), "closed_form_target": float(target),
                "relative_error": float(rel),
                "volume_power_identity_rel": float(identity_rel)},
               os.path.join(out, "paneitz.json"))
    return [
        ("closed-form-target", rel < 1e-2,
         f"functional {float(value)!r} vs {float(target)!r} (rel {rel:.3e})"),
        ("volume-power-identity", identity_rel < 1e-2,
         f"matches (volume)^(4/n) to {identity_rel:.3e}"),
    ]


# ---------------------------------------------------------------------------


def run(experiment_name, config, out_dir, seed=None, threads=1):
    """Validate, run, write artifacts, and return (exit_code, checks)."""
    if experiment_name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment_name!r}; choose from "
                          + ", ".join(sorted(EXPERIMENTS)))
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    eff_seed = seed if seed is not None else config.get("seed", 0)
    if not isinstance(eff_seed, int):
        raise ConfigError("seed must be an integer")
    os.makedirs(out_dir, exist_ok=True)
    checks = EXPERIMENTS[experiment_name](config, out_dir, eff_seed, threads)
    failed = 0
    for name, ok, detail in checks:
        if name.startswith("xfail:"):
            tag = "XFAIL(by design)" if not ok else "XPASS(unexpected)"
            print(f"{tag} {name[6:]}: {detail}")
            continue
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    return (0 if failed == 0 else 1), checks


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qlab",
        description="Batch experiments for the fourth-order curvature lab.")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        code, _ = run(args.experiment, config, args.out, args.seed,
                      args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return code


if __name__ == "__main__":
    sys.exit(main())
