"""Command-line entry point: ``bayesdecay simulate | fit | select | classify``.

Exit codes: 0 success, 2 input error, 3 numeric failure. All logarithms in
the outputs are natural logarithms.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from bayesdecay.classify import PosteriorSummary, classify_batch
from bayesdecay.config import RunConfig
from bayesdecay.errors import GridMismatchError, InputError, NumericError
from bayesdecay.inference import fit_model
from bayesdecay.io import curves_to_csv, read_curves
from bayesdecay.model_space import ModelSpec, layout
from bayesdecay.search import search
from bayesdecay.synth import GeneratingSpec, simulate

log = logging.getLogger("bayesdecay")

EXIT_INPUT = 2
EXIT_NUMERIC = 3
LOG_NOTE = "natural logarithms"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    # JSON has no inf/nan; map them to null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def load_schema(name: str) -> dict:
    """Published JSON schema for ``fit``, ``select`` or ``summary`` output."""
    return json.loads(resources.files("bayesdecay").joinpath("schemas", f"{name}.schema.json").read_text())


def dumps(doc) -> str:
    return json.dumps(_clean(json.loads(json.dumps(doc, default=_json_default))), indent=2)


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    try:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}") from exc


def _load_config(args) -> RunConfig:
    run = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "draws", None) is not None:
        changes["draws"] = args.draws
    fit = run.fit.replace(**changes) if changes else run.fit
    out = args.out if getattr(args, "out", None) is not None else run.out
    return RunConfig(fit=fit, out=out)


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    run = _load_config(args)
    gen = GeneratingSpec.load(args.spec)
    if args.seed is not None:
        gen = GeneratingSpec(gen.components, gen.poly, gen.aer_amplitude, gen.sigma_s, gen.n_l, gen.grid, args.seed)
    data = simulate(gen, run.fit)
    _emit(curves_to_csv(data), run.out)
    return 0


# -- fit ---------------------------------------------------------------------


def fit_report(result) -> dict:
    lay = layout(result.spec)
    u = result.u_map
    sd = result.u_sd
    params = []
    for name, ui, si in zip(lay.nonlinear_names, u, sd):
        params.append(
            {
                "name": name,
                "map_ms": math.exp(ui),
                "log_map": ui,
                "log_sd": si,
                "lower_1sd_ms": math.exp(ui - si) if math.isfinite(si) else 0.0,
                "upper_1sd_ms": math.exp(ui + si) if math.isfinite(si) else math.inf,
            }
        )
    amps = [
        {"name": n, "mean": b, "sd": s}
        for n, b, s in zip(lay.amplitude_names, result.amplitude_means, result.amplitude_sds)
    ]
    ev = result.evidence
    return {
        "log_base": "e",
        "model": result.spec.label,
        "log_model_evidence": result.log_model_evidence,
        "laplace_log_evidence": result.laplace_log_evidence,
        "nonlinear": params,
        "amplitudes": amps,
        "sigma": {
            "mode": ev.sigma_mode,
            "mean": ev.sigma_mean,
            "sd": ev.sigma_sd,
            "sigma_s_mode": ev.sigma_s_mode,
            "sigma_s_pooled_mode": ev.sigma_s_pooled_mode,
            "n_l": ev.n_l,
        },
        "valve": result.valve.to_dict(),
        "converged": result.converged,
        "pinned": result.pinned,
        "evidence": ev.to_dict(),
    }


def fit_table(report: dict) -> str:
    lines = [f"# {report['model']}  log evidence {report['log_model_evidence']:.4f} ({LOG_NOTE})"]
    lines.append(f"{'parameter':<12} {'MAP':>12} {'-1 sd':>12} {'+1 sd':>12}")
    for p in report["nonlinear"]:
        lines.append(f"{p['name']:<12} {p['map_ms']:12.5g} {p['lower_1sd_ms']:12.5g} {p['upper_1sd_ms']:12.5g}")
    lines.append(f"{'amplitude':<12} {'mean':>12} {'sd':>12}")
    for a in report["amplitudes"]:
        lines.append(f"{a['name']:<12} {a['mean']:12.5g} {a['sd']:12.5g}")
    s = report["sigma"]
    lines.append(f"sigma mode {s['mode']:.5g}  mean {s['mean']:.5g}  sigma_s {s['sigma_s_mode']:.5g}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    run = _load_config(args)
    spec = ModelSpec.parse(args.model)
    data = read_curves(args.curves)
    result = fit_model(data, spec, run.fit)
    report = fit_report(result)
    if run.out is None:
        sys.stderr.write(fit_table(report))
        _emit(dumps(report), None)
    else:
        sys.stdout.write(fit_table(report))
        _emit(dumps(report), run.out)
    return 0


# -- select ------------------------------------------------------------------


def cmd_select(args) -> int:
    run = _load_config(args)
    data = read_curves(args.curves)
    trace = search(data, run.fit)
    if trace.best_result is None:
        raise NumericError("no model could be evaluated")
    tissue = args.tissue_id or Path(args.curves).stem
    doc = {"log_base": "e", **trace.to_dict()}
    doc["summary"] = PosteriorSummary.from_trace(tissue, data.grid, trace, run.fit).to_dict()
    table = f"# search trace ({LOG_NOTE})\n" + trace.table() + "\n"
    if run.out is None:
        sys.stderr.write(table)
        _emit(dumps(doc), None)
    else:
        sys.stdout.write(table)
        _emit(dumps(doc), run.out)
    return 0


# -- classify ----------------------------------------------------------------


def load_summaries(directory) -> list[PosteriorSummary]:
    """Every *.json in ``directory``: a summary, or a ``select`` output holding one."""
    if not Path(directory).is_dir():
        raise InputError(f"not a directory: {directory}")
    paths = sorted(Path(directory).glob("*.json"))
    out = []
    for p in paths:
        try:
            doc = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read summary {p}: {exc}") from exc
        out.append(PosteriorSummary.from_dict(doc.get("summary", doc)))
    if not out:
        raise InputError(f"no summaries found in {directory}")
    return sorted(out, key=lambda s: s.tissue_id)


def grey_levels(tissue_ids) -> dict[str, int]:
    """Evenly spaced 8-bit levels, in sorted tissue order."""
    ids = sorted(tissue_ids)
    if len(ids) == 1:
        return {ids[0]: 255}
    return {t: round(255 * i / (len(ids) - 1)) for i, t in enumerate(ids)}


def cmd_classify(args) -> int:
    run = _load_config(args)
    summaries = load_summaries(args.summaries)
    ids = [s.tissue_id for s in summaries]
    curves_dir = Path(args.curves)
    if not curves_dir.is_dir():
        raise InputError(f"not a directory: {curves_dir}")
    levels = grey_levels(ids)
    rows, skipped = [], 0
    for path in sorted(curves_dir.glob("*.csv")):
        data = read_curves(path)
        names = [path.stem] if data.n_l == 1 else [f"{path.stem}:{i + 1}" for i in range(data.n_l)]
        try:
            results = classify_batch(data, summaries, config=run.fit)
        except GridMismatchError as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped += 1
            continue
        for name, res in zip(names, results):
            rows.append([name, res.winner] + [f"{p:.12g}" for p in res.probs])
    out = run.out
    header = ["curve_id", "winner"] + [f"p_{t}" for t in ids]
    lines = [",".join(header)] + [",".join(r) for r in rows]
    _emit("\n".join(lines) + "\n", out)
    map_path = args.map or (str(Path(out).with_suffix(".map.csv")) if out else None)
    if map_path is not None:
        with open(map_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["curve_id", "level"])
            for r in rows:
                w.writerow([r[0], levels[r[1]]])
    if skipped:
        log.warning("%d curve file(s) skipped for grid mismatch", skipped)
    return 0


# -- entry point -------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--seed", type=int, metavar="N", help="override the random seed")
    p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesdecay", description="Bayesian analysis of multi-exponential decay curves.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate replicated decay curves from a JSON generating spec")
    p.add_argument("spec", help="generating spec JSON")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model and report parameters with credible intervals")
    p.add_argument("curves", help="curve CSV")
    p.add_argument("--model", required=True, metavar="Mj.k.l", help="model string, e.g. M2.0.1")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="search the model lattice for the most probable model")
    p.add_argument("curves", help="curve CSV")
    p.add_argument("--tissue-id", help="tissue label stored in the summary (default: file stem)")
    _common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("classify", help="classify curves against stored tissue summaries")
    p.add_argument("summaries", help="directory of summary (or select output) JSON files")
    p.add_argument("curves", help="directory of curve CSV files")
    p.add_argument("--draws", type=int, metavar="S", help="Monte Carlo draws per model")
    p.add_argument("--map", metavar="PATH", help="grey-level map output (default: next to --out)")
    _common(p)
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
