"""Command-line front end.

Subcommands certify explanations, sweep stability curves, dump spectra
with theorem-check verdicts, score insertion/deletion faithfulness,
measure ranking stability, and re-certify under smoothing.  Every run
writes a deterministic JSON record and CSV rows (plus a rendered figure)
next to ``--out``; reruns with the same seed reproduce the JSON and CSV
files byte for byte.

Exit codes: 0 success, 1 invariant violation (a checked identity or
accounting equality failed), 2 IO or wire-protocol trouble, 3 bad
configuration or input data.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time

import numpy as np

from . import bise as bise_mod
from . import plots
from .adapters import ModelAdapter, ProtocolError, adapter_from_descriptor
from .core import (
    ArgmaxEqual,
    Attribution,
    InvariantViolation,
    Mask,
    ScalarGap,
    apply_mask,
    binarize_top_fraction,
)
from .perturb import EnumerationTooLarge, RankingPerturbation, delta_size
from .sca import (
    ModelEvaluationError,
    certify_hard,
    estimate_stability,
    estimate_stability_per_k,
    exact_stability,
)
from .smoothing import SmoothingConfig, mus_hard_radius, wrap_smoothed
from . import spectral

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_IO = 2
EXIT_CONFIG = 3

SMOOTH_GRID = (1.0, 0.9, 0.75, 0.5, 0.25)


class CliConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 3
        raise CliConfigError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--model", default="table:n=10",
                   help="builtin descriptor (and|majority|table, with :k=v params) "
                        "or external:<command>")
    p.add_argument("--input", default=None,
                   help="JSON-lines items file; a deterministic demo batch is "
                        "generated when omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--gap", type=float, default=None,
                   help="compare scalar outputs within this gap instead of argmax")
    p.add_argument("--top-fraction", type=float, default=0.25,
                   help="default top fraction for items that do not set one")
    p.add_argument("--out", default=None,
                   help="output base path; writes <out>.json, <out>.csv and a figure")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="what to print on stdout")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering")


def build_parser() -> _Parser:
    parser = _Parser(prog="stabcert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="estimate or certify stability per item")
    _add_common(p)
    p.add_argument("--radii", default="1")
    p.add_argument("--kind", choices=("soft", "hard", "per-size"), default="soft")
    p.add_argument("--exact", action="store_true",
                   help="also enumerate the exact rate (small sets only)")

    p = sub.add_parser("curve", help="stability estimates across radii")
    _add_common(p)
    p.add_argument("--radii", default="1,2,3")
    p.add_argument("--kind", choices=("soft", "hard", "per-size"), default="soft")
    p.add_argument("--exact", action="store_true")

    p = sub.add_parser("spectrum", help="dump spectra and run theorem checks")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--p", type=float, default=0.25, help="bias for the p-biased checks")
    p.add_argument("--gamma", type=float, default=0.25,
                   help="value gap for the stability-bound checks")
    p.add_argument("--radius", type=int, default=2,
                   help="radius for the stability-bound checks")

    p = sub.add_parser("bise", help="insertion/deletion faithfulness with bounds")
    _add_common(p)
    p.add_argument("--step", type=int, default=4)
    p.add_argument("--m", type=int, default=100, help="samples per curve point; 0 = exact")

    p = sub.add_parser("rankstab", help="ranking stability of a candidate pool")
    _add_common(p)
    p.add_argument("--step", type=int, default=4)
    p.add_argument("--perturb", default="window:4", help="window:<size> or swap:<pairs>")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--metric", choices=("insertion", "deletion"), default="insertion")

    p = sub.add_parser("smooth", help="re-certify under random-masking smoothing")
    _add_common(p)
    p.add_argument("--radii", default="1")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="single masking rate; omits the default grid "
                        f"{list(SMOOTH_GRID)}")
    p.add_argument("--mc-samples", type=int, default=32)
    p.add_argument("--exact", action="store_true", help="exact smoothing (n <= 20)")

    return parser


def _relation(args):
    return ScalarGap(args.gap) if args.gap is not None else ArgmaxEqual()


def _parse_radii(text: str) -> list[int]:
    try:
        radii = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as e:
        raise CliConfigError(f"bad --radii value {text!r}: {e}") from e
    if not radii or any(r < 0 for r in radii):
        raise CliConfigError(f"--radii needs nonnegative integers, got {text!r}")
    return radii


def _parse_perturbation(text: str) -> RankingPerturbation:
    kind, _, size = text.partition(":")
    try:
        return RankingPerturbation(kind=kind, size=int(size))
    except ValueError as e:
        raise CliConfigError(f"bad --perturb value {text!r}: {e}") from e


def _build_model(args) -> ModelAdapter:
    try:
        return adapter_from_descriptor(args.model, seed=args.seed)
    except ValueError as e:
        raise CliConfigError(str(e)) from e


def _load_items(args, model: ModelAdapter) -> list[dict]:
    if args.input is None:
        return _demo_items(model, args.seed, args.top_fraction)
    try:
        with open(args.input) as fh:
            lines = fh.readlines()
    except FileNotFoundError as e:
        raise OSError(f"input file not found: {args.input}") from e
    items = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            x = np.asarray(obj["x"], dtype=float)
            scores = np.asarray(obj["scores"], dtype=float)
            fraction = float(obj.get("top_fraction", args.top_fraction))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CliConfigError(f"{args.input}:{lineno}: malformed item: {e}") from e
        if x.shape != (model.n,) or scores.shape != (model.n,):
            raise CliConfigError(
                f"{args.input}:{lineno}: item width does not match model n={model.n}"
            )
        items.append({"x": x, "scores": scores, "top_fraction": fraction})
    if not items:
        raise CliConfigError(f"{args.input}: no items found")
    return items


def _demo_items(model: ModelAdapter, seed: int, top_fraction: float,
                count: int = 4) -> list[dict]:
    rng = np.random.default_rng([seed, 424242])
    items = []
    for _ in range(count):
        items.append(
            {
                "x": rng.uniform(0.5, 1.5, size=model.n),
                "scores": rng.normal(size=model.n),
                "top_fraction": top_fraction,
            }
        )
    return items


def _attribution(item: dict) -> Attribution:
    return binarize_top_fraction(item["scores"], item["top_fraction"])


def _config_dict(args, skip=("out", "format", "no_plot")) -> dict:
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        cfg[key] = value
    return cfg


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _bootstrap_ci(values, seed: int, tag: int, iters: int = 1000,
                  level: float = 95.0) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    rng = np.random.default_rng([seed, 90210, tag])
    picks = rng.integers(0, arr.size, size=(iters, arr.size))
    means = arr[picks].mean(axis=1)
    lo, hi = np.percentile(means, [(100 - level) / 2, 100 - (100 - level) / 2])
    return float(lo), float(hi)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _emit(args, record: dict, header, rows, figure_fn=None) -> None:
    text_json = json.dumps(record, sort_keys=True, indent=2) + "\n"
    text_csv = _csv_text(header, rows)
    if args.out:
        with open(args.out + ".json", "w") as fh:
            fh.write(text_json)
        with open(args.out + ".csv", "w") as fh:
            fh.write(text_csv)
        if figure_fn is not None and not args.no_plot:
            figure_fn(args.out + ".png")
    sys.stdout.write(text_json if args.format == "json" else text_csv)


def _check_eval_budget(expected: int, observed: int) -> None:
    if expected != observed:
        raise InvariantViolation(
            f"evaluation accounting mismatch: expected {expected} model calls, "
            f"observed {observed}"
        )


def cmd_certify(args, curve_mode: bool = False) -> int:
    model = _build_model(args)
    items = _load_items(args, model)
    radii = _parse_radii(args.radii)
    rel = _relation(args)
    estimator = {
        "soft": estimate_stability,
        "hard": certify_hard,
        "per-size": estimate_stability_per_k,
    }[args.kind]
    start_calls = model.calls
    expected = 0
    rows = []
    item_records = []
    taus_by_radius: dict[int, list[float]] = {r: [] for r in radii}
    exacts_by_radius: dict[int, list[float]] = {r: [] for r in radii}
    for idx, item in enumerate(items):
        attribution = _attribution(item)
        reports = []
        for r in radii:
            report = estimator(model, item["x"], attribution.mask, r,
                               args.epsilon, args.delta, args.seed, rel)
            if args.kind == "per-size":
                expected += (1 + report.effective_radius * report.n_samples
                             if report.effective_radius > 0 else 0)
            else:
                expected += 1 + report.n_samples
            row = [idx, r, report.tau_hat, report.verdict, report.n_samples,
                   report.effective_radius]
            if args.exact:
                tau_exact = exact_stability(model, item["x"], attribution.mask, r, rel)
                expected += 1 + delta_size(model.n, attribution.mask.size, r)
                exacts_by_radius[r].append(tau_exact)
                row.append(tau_exact)
            rows.append(row)
            taus_by_radius[r].append(report.tau_hat)
            reports.append(report.to_dict())
        item_records.append({"item": idx, "mask": attribution.mask.to_string(),
                             "reports": reports})
    observed = model.calls - start_calls
    _check_eval_budget(expected, observed)

    summary = []
    for tag, r in enumerate(radii):
        lo, hi = _bootstrap_ci(taus_by_radius[r], args.seed, tag)
        entry = {"radius": r, "mean_tau_hat": float(np.mean(taus_by_radius[r])),
                 "ci95_low": lo, "ci95_high": hi}
        if args.exact:
            entry["mean_tau_exact"] = float(np.mean(exacts_by_radius[r]))
        summary.append(entry)
    config = _config_dict(args)
    record = {
        "command": "curve" if curve_mode else "certify",
        "config": config,
        "config_hash": _config_hash(config),
        "items": item_records,
        "summary": summary,
        "eval_counts": {"expected": expected, "observed": observed},
    }
    header = ["item", "radius", "tau_hat", "verdict", "n_samples", "effective_radius"]
    if args.exact:
        header.append("tau_exact")

    def figure(path: str) -> None:
        if curve_mode or len(radii) > 1:
            mean = [s["mean_tau_hat"] for s in summary]
            lo = [s["ci95_low"] for s in summary]
            hi = [s["ci95_high"] for s in summary]
            exact = [s.get("mean_tau_exact") for s in summary] if args.exact else None
            plots.save_stability_curve(path, radii, mean, lo, hi, exact)
        else:
            labels = [f"item {i} r={r}" for i, r, *_ in rows]
            plots.save_certify_bars(path, labels, [row[2] for row in rows], args.epsilon)

    _emit(args, record, header, rows, figure)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    model = _build_model(args)
    if model.n > spectral.SPECTRAL_CAP:
        raise CliConfigError(f"spectrum needs n <= {spectral.SPECTRAL_CAP}, model has n={model.n}")
    items = _load_items(args, model)
    item = items[0]
    lam, p, gamma = args.lam, args.p, args.gamma
    h = spectral.model_table(model, item["x"], component=0)
    std = spectral.fourier_transform(h)
    mono = spectral.monotone_transform(h)
    checks: list[dict] = []

    def add_check(name: str, diff: float, tol: float = 1e-9, detail: str = "") -> None:
        checks.append({"name": name, "ok": bool(diff <= tol),
                       "max_abs_diff": float(diff), "detail": detail})

    add_check("fourier_roundtrip",
              float(np.max(np.abs(spectral.fourier_inverse(std).table - h.table))))
    add_check("monotone_roundtrip",
              float(np.max(np.abs(spectral.monotone_inverse(mono).table - h.table))))
    exact_sm = spectral.smooth_exact(h, lam)
    via_std = spectral.fourier_inverse(spectral.smooth_std(std, lam))
    via_mono = spectral.monotone_inverse(spectral.smooth_monotone(mono, lam))
    add_check("smoothing_via_fourier", float(np.max(np.abs(via_std.table - exact_sm.table))),
              detail=f"lam={lam}")
    add_check("smoothing_via_monotone", float(np.max(np.abs(via_mono.table - exact_sm.table))),
              detail=f"lam={lam}")
    tail_ok = 0.0
    for k in range(1, model.n + 1):
        lhs = spectral.tail_mass(spectral.smooth_std(std, lam), k)
        rhs = spectral.tail_bound(model.n, k, lam) * spectral.tail_mass(std, k)
        tail_ok = max(tail_ok, lhs - rhs)
    add_check("tail_contraction", max(0.0, tail_ok), detail=f"lam={lam}")
    cob = spectral.change_of_basis_check(model.n, [0, 1], p, lam)
    checks.append({"name": cob.name, "ok": cob.ok, "max_abs_diff": cob.max_abs_diff,
                   "detail": cob.detail})
    var = spectral.variance_reduction_check(h, p, lam)
    checks.append({"name": var.name, "ok": var.ok,
                   "max_abs_diff": var.max_abs_diff,
                   "detail": f"lhs={var.lhs!r} rhs={var.rhs!r} {var.detail}"})

    attribution = _attribution(item)
    alpha = attribution.mask
    r = max(1, min(args.radius, model.n - alpha.size))
    bound = spectral.stability_lower_bound(mono, alpha, r, gamma)
    tau_exact = exact_stability(model, item["x"], alpha, r, ScalarGap(gamma))
    add_check("stability_lower_bound", max(0.0, bound.bound - tau_exact), tol=1e-9,
              detail=f"bound={bound.bound!r} tau_exact={tau_exact!r} vacuous={bound.vacuous}")
    sm_bound = spectral.smoothed_stability_bound(mono, alpha, r, gamma, lam)
    add_check("smoothed_mass_contraction",
              max(0.0, sm_bound.q_smoothed - lam * sm_bound.q), tol=1e-9,
              detail=f"q={sm_bound.q!r} q_smoothed={sm_bound.q_smoothed!r}")
    hard_r = spectral.hard_radius_monotone(mono, alpha, gamma)
    brute = _brute_hard_radius(h, alpha, gamma)
    add_check("hard_radius_vs_bruteforce", float(abs(hard_r - brute)), tol=0.0,
              detail=f"hard_r={hard_r} brute={brute}")

    report_rows = spectral.masking_vs_flipping_report(std, SMOOTH_GRID)
    config = _config_dict(args)
    record = {
        "command": "spectrum",
        "config": config,
        "config_hash": _config_hash(config),
        "checks": checks,
        "stability_bound": {"q": bound.q, "bound": bound.bound,
                            "vacuous": bound.vacuous, "radius": r, "gamma": gamma},
        "hard_radius": hard_r,
        "eval_counts": {"expected": None, "observed": model.calls},
    }
    header = ["operator", "lam", "degree", "mean_abs_coeff"]
    rows = [[row["operator"], row["lam"], row["degree"], row["mean_abs_coeff"]]
            for row in report_rows]

    def figure(path: str) -> None:
        plots.save_degree_profiles(path, report_rows)

    if args.out:
        spectral.write_spectrum_csv(std, args.out + "_std.csv")
        spectral.write_spectrum_csv(mono, args.out + "_monotone.csv")
    _emit(args, record, header, rows, figure)
    failed = [c["name"] for c in checks if not c["ok"]]
    if failed:
        raise InvariantViolation(f"theorem checks failed: {', '.join(failed)}")
    return EXIT_OK


def _brute_hard_radius(h: spectral.DenseBooleanFunction, alpha: Mask,
                       gamma: float, tol: float = 1e-12) -> int:
    idx = np.arange(1 << h.n, dtype=np.uint32)
    above = (idx & np.uint32(alpha.bits)) == np.uint32(alpha.bits)
    supersets = idx[above]
    moves = np.abs(h.table[supersets] - h.table[alpha.bits])
    sizes = np.bitwise_count(supersets & np.uint32(~alpha.bits & ((1 << h.n) - 1)))
    d = h.n - alpha.size
    worst = np.zeros(d + 1)
    np.maximum.at(worst, sizes.astype(np.int64), moves)
    for k in range(1, d + 1):
        if worst[k] > gamma + tol:
            return k - 1
    return d


def cmd_bise(args) -> int:
    model = _build_model(args)
    items = _load_items(args, model)
    rel = _relation(args)
    if args.m < 0:
        raise CliConfigError(f"--m must be nonnegative, got {args.m}")
    rows = []
    item_records = []
    first_scores = None
    start_calls = model.calls
    for idx, item in enumerate(items):
        attribution = _attribution(item)
        g = bise_mod.derive_indicator(model, item["x"], rel)
        scores = []
        for mode_fn in (bise_mod.insertion_bise, bise_mod.deletion_bise):
            if args.m == 0:
                score = mode_fn(g, attribution, step=args.step, m=None)
            else:
                rng = np.random.default_rng([args.seed, idx, 0 if mode_fn is bise_mod.insertion_bise else 1])
                score = mode_fn(g, attribution, step=args.step, m=args.m, rng=rng)
                score = bise_mod.bise_bounds(score, args.epsilon, args.delta)
            scores.append(score)
            w = score.bounds.half_width if score.bounds else 0.0
            for k, phi in zip(score.ks, score.values):
                rows.append([idx, score.mode, k, phi,
                             max(0.0, phi - w), min(1.0, phi + w)])
        if first_scores is None:
            first_scores = scores
        item_records.append({"item": idx, "mask": attribution.mask.to_string(),
                             "scores": [s.to_dict() for s in scores]})
    config = _config_dict(args)
    record = {
        "command": "bise",
        "config": config,
        "config_hash": _config_hash(config),
        "items": item_records,
        "note": bise_mod.METHOD_NOTE,
        "eval_counts": {"expected": None,
                        "observed": model.calls - start_calls,
                        "detail": "indicator evaluations are cached per distinct mask"},
    }
    header = ["item", "mode", "k", "phi", "lower", "upper"]

    def figure(path: str) -> None:
        plots.save_bise_curves(path, first_scores)

    _emit(args, record, header, rows, figure)
    return EXIT_OK


def cmd_rankstab(args) -> int:
    model = _build_model(args)
    items = _load_items(args, model)
    if len(items) < 2:
        raise CliConfigError("rankstab needs at least two items to form a candidate pool")
    perturbation = _parse_perturbation(args.perturb)
    x = items[0]["x"]
    pool = [_attribution(item) for item in items]
    curve = bise_mod.insertion_test if args.metric == "insertion" else bise_mod.deletion_test

    def metric(model_, x_, attribution: Attribution) -> float:
        return curve(model_, x_, attribution.ranking, step=args.step).auc

    result = bise_mod.ranking_stability(metric, model, x, pool, perturbation,
                                        trials=args.trials, seed=args.seed)
    config = _config_dict(args)
    record = {
        "command": "rankstab",
        "config": config,
        "config_hash": _config_hash(config),
        "summary": {"mean_pct": result.mean_pct, "sd_pct": result.sd_pct,
                    "trials": result.trials, "pool_size": result.pool_size},
        "eval_counts": {"expected": None, "observed": model.calls},
    }
    header = ["trial", "displacement_pct"]
    rows = [[t, v] for t, v in enumerate(result.per_trial_pct)]

    def figure(path: str) -> None:
        plots.save_rankstab_hist(path, result.per_trial_pct, result.mean_pct,
                                 result.sd_pct)

    _emit(args, record, header, rows, figure)
    return EXIT_OK


def cmd_smooth(args) -> int:
    model = _build_model(args)
    items = _load_items(args, model)
    radii = _parse_radii(args.radii)
    rel = _relation(args)
    lams = [args.lam] if args.lam is not None else list(SMOOTH_GRID)
    mode = "exact" if args.exact else "montecarlo"
    rows = []
    series: dict[int, list[float]] = {r: [] for r in radii}
    lam_records = []
    for lam in lams:
        config = SmoothingConfig(lam=lam, samples=args.mc_samples, seed=args.seed,
                                 mode=mode)
        smodel = wrap_smoothed(model, config)
        expected = 0
        taus: dict[int, list[float]] = {r: [] for r in radii}
        for idx, item in enumerate(items):
            attribution = _attribution(item)
            base_out = smodel.evaluate(apply_mask(item["x"], attribution.mask))
            expected += 1
            radius = mus_hard_radius(base_out, lam) if lam > 0 else None
            for r in radii:
                report = estimate_stability(smodel, item["x"], attribution.mask, r,
                                            args.epsilon, args.delta, args.seed, rel)
                expected += 1 + report.n_samples
                taus[r].append(report.tau_hat)
                rows.append([
                    lam, idx, r, report.tau_hat, report.verdict,
                    radius.r_real if radius else "",
                    radius.r_int if radius else "",
                    smodel.radius_label,
                ])
        _check_eval_budget(expected, smodel.calls)
        for r in radii:
            series[r].append(float(np.mean(taus[r])))
        lam_records.append({
            "lam": lam,
            "mode": mode,
            "radius_label": smodel.radius_label,
            "mean_tau_by_radius": {str(r): float(np.mean(taus[r])) for r in radii},
            "smoothed_eval_count": smodel.calls,
        })
    config = _config_dict(args)
    record = {
        "command": "smooth",
        "config": config,
        "config_hash": _config_hash(config),
        "grid": lam_records,
        "eval_counts": {"expected": None, "observed": model.calls,
                        "detail": "inner model calls across all masking rates"},
    }
    header = ["lam", "item", "radius", "tau_hat", "verdict", "mus_r_real",
              "mus_r_int", "radius_label"]

    def figure(path: str) -> None:
        plots.save_smooth_grid(path, lams, series)

    _emit(args, record, header, rows, figure)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    started = time.monotonic()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help lands here
            return int(e.code or 0)
        dispatch = {
            "certify": lambda a: cmd_certify(a, curve_mode=False),
            "curve": lambda a: cmd_certify(a, curve_mode=True),
            "spectrum": cmd_spectrum,
            "bise": cmd_bise,
            "rankstab": cmd_rankstab,
            "smooth": cmd_smooth,
        }
        code = dispatch[args.command](args)
        print(f"done in {time.monotonic() - started:.2f}s", file=sys.stderr)
        return code
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ProtocolError, ModelEvaluationError, OSError) as e:
        print(f"io/protocol error: {e}", file=sys.stderr)
        return EXIT_IO
    except (CliConfigError, EnumerationTooLarge, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
