"""Command line front end: ``coprimefp <command> [options]``.

Exit codes: 0 success, 1 domain error (bad data, bad keys, unreadable file),
2 usage error.  Machine-readable output is JSON with sorted keys; nothing
time-dependent is printed unless ``--timings`` is given, so repeated runs with
the same arguments produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .coprime import (
    KeySet,
    draw_keys,
    generate_template,
    load_template,
    read_keys,
    save_template,
    validate_keys,
)
from .evalkit import (
    KeySpace,
    PerUserKeys,
    SameKey,
    brute_force_estimate,
    compute_eer,
    compute_features,
    diversity_generate,
    fvc_protocol_scores,
    overlap_coefficient,
    protocol_pairs,
    revocability_experiment,
    timing_benchmark,
    unlinkability_experiment,
)
from .fpdata import load_dataset, read_minutiae_file, read_skeleton, save_dataset
from .matcher import (
    DEFAULT_LOCAL_THRESHOLD,
    DEFAULT_ORIENTATION_WEIGHT,
    MatchParams,
    global_match,
)
from .ridgefeat import build_feature_matrix
from .sectoring import SectorConfig
from .synthgen import PopulationConfig, generate_population


class UsageError(Exception):
    """Bad flag combination detected after parsing (exit code 2)."""


def _emit(payload, out: Optional[str] = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Shared flag groups


def _add_sector_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sectors", type=int, default=8, help="angular sectors per minutia (default 8)")


def _add_key_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("keys (either a key file or all of --k1..--k4)")
    g.add_argument("--keys", help="key file holding one line 'k1 k2 k3 k4 rho'")
    for name in ("k1", "k2", "k3", "k4"):
        g.add_argument(f"--{name}", type=int)
    g.add_argument("--seed", type=int, default=None, help="filler seed rho (default 0)")


def _add_match_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--local-threshold", type=float, default=DEFAULT_LOCAL_THRESHOLD,
                   help=f"largest local score that pairs two minutiae (default {DEFAULT_LOCAL_THRESHOLD})")
    p.add_argument("--orient-weight", type=float, default=DEFAULT_ORIENTATION_WEIGHT,
                   help=f"scale of orientation differences in radians (default {DEFAULT_ORIENTATION_WEIGHT})")


def _keys_from_args(args, required: bool = True) -> Optional[KeySet]:
    given = [getattr(args, n) for n in ("k1", "k2", "k3", "k4")]
    if args.keys:
        if any(v is not None for v in given):
            raise UsageError("give either --keys or --k1..--k4, not both")
        keys = read_keys(args.keys)
        if args.seed is not None:
            keys = KeySet(keys.k1, keys.k2, keys.k3, keys.k4, args.seed)
        return keys
    if all(v is not None for v in given):
        return KeySet(*given, rho=args.seed if args.seed is not None else 0)
    if any(v is not None for v in given) or required:
        raise UsageError("keys required: --keys FILE or all of --k1 --k2 --k3 --k4")
    return None


def _params(args) -> MatchParams:
    try:
        return MatchParams(args.local_threshold, args.orient_weight)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _sector_config(args) -> SectorConfig:
    try:
        return SectorConfig(args.sectors)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_dataset(path: str):
    dataset = load_dataset(path)
    if not dataset:
        raise ValueError(f"no '<subject>_<impression>.min' files under {path}")
    return dataset


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    config = PopulationConfig(width=args.width, height=args.height, jitter=args.jitter)
    entries = generate_population(args.subjects, args.impressions, args.seed, config)
    written = save_dataset(entries, args.out)
    _emit({"directory": str(args.out), "records": len(written),
           "subjects": args.subjects, "impressions": args.impressions, "seed": args.seed})
    return 0


def _features_for(args):
    record = read_minutiae_file(args.input)
    skeleton = read_skeleton(args.skel, (record.width, record.height))
    return record, build_feature_matrix(record, skeleton, _sector_config(args))


def cmd_extract(args) -> int:
    record, features = _features_for(args)
    text = features.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.json:
        _emit({"subject_id": record.subject_id, "impression_id": record.impression_id,
               "n": features.n, "s": features.s, "T": features.T,
               "features": features.values.tolist()})
    elif not args.out:
        sys.stdout.write(text)
    return 0


def cmd_protect(args) -> int:
    keys = _keys_from_args(args)
    _, features = _features_for(args)
    problem = validate_keys(keys, features.T)
    if problem is not None:
        raise ValueError(f"keys unusable for T={features.T}: {problem}")
    template = generate_template(features, keys)
    save_template(template, args.out)
    if args.json:
        _emit({"template": str(args.out), "T": template.T, "s": template.s, "n": template.n})
    return 0


def cmd_match(args) -> int:
    keys = _keys_from_args(args)
    query_keys = read_keys(args.query_keys) if args.query_keys else keys
    result = global_match(load_template(args.query), load_template(args.enrolled),
                          query_keys, keys, _params(args))
    decision = None
    if args.threshold is not None:
        decision = "accept" if result.overall_score >= args.threshold else "reject"
    if args.json:
        payload = {"score": result.overall_score, "matched": result.matched_count,
                   "query_minutiae": result.query_minutiae_count,
                   "featureless_query_rows": result.featureless_query_rows,
                   "enrolled_minutiae": result.enrolled_minutiae_count,
                   "pairs": [list(p) for p in result.pairs]}
        if decision is not None:
            payload["decision"] = decision
        _emit(payload)
    else:
        sys.stdout.write(f"{result.overall_score!r}\n")
        if decision is not None:
            sys.stdout.write(decision + "\n")
    return 0


def _write_scores_csv(path: str, dataset, scores) -> None:
    genuine_pairs, imposter_pairs = protocol_pairs(dataset)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "query", "enrolled", "score"])
    name = [f"{e.record.subject_id}_{e.record.impression_id}" for e in dataset]
    for kind, pairs, values in (("genuine", genuine_pairs, scores.genuine),
                                ("imposter", imposter_pairs, scores.imposter)):
        for (q, e), v in zip(pairs, values):
            w.writerow([kind, name[q], name[e], repr(v)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def cmd_eval(args) -> int:
    config = _sector_config(args)
    params = _params(args)
    dataset = _load_dataset(args.data)
    features = compute_features(dataset, config)
    scenarios = ["unprotected", "same-key", "different-key"] if args.scenario == "all" else [args.scenario]
    reports = {}
    for scenario in scenarios:
        if scenario == "unprotected":
            policy = None
        elif scenario == "same-key":
            keys = _keys_from_args(args, required=False)
            if keys is None:
                rng = np.random.default_rng(np.random.SeedSequence(args.seed or 0))
                keys = draw_keys(rng, [f.T for f in features])
            policy = SameKey(keys)
        else:
            policy = PerUserKeys(args.seed or 0)
        scores = fvc_protocol_scores(dataset, policy, config, params, features)
        if args.scores_csv:
            target = Path(args.scores_csv)
            if len(scenarios) > 1:
                target = target.with_name(f"{target.stem}_{scenario}{target.suffix}")
            _write_scores_csv(str(target), dataset, scores)
        report = compute_eer(scores, args.roc_points).to_dict()
        if not args.timings:
            report.pop("timings", None)
        reports[scenario] = report
    payload = {"sectors": config.s, "local_threshold": params.local_threshold,
               "orientation_weight": params.orientation_weight, "records": len(dataset),
               "scenarios": reports}
    if args.timings:
        payload["benchmark"] = timing_benchmark(dataset, config, params, seed=args.seed or 0).to_dict()
    _emit(payload, args.out)
    return 0


def cmd_revocability(args) -> int:
    config = _sector_config(args)
    params = _params(args)
    dataset = _load_dataset(args.data)
    features = compute_features(dataset, config)
    index = 0
    if args.subject is not None:
        matches = [k for k, e in enumerate(dataset)
                   if e.record.subject_id == args.subject
                   and (args.impression is None or e.record.impression_id == args.impression)]
        if not matches:
            raise ValueError(f"no record for subject {args.subject!r}")
        index = matches[0]
    target = features[index]
    keys = _keys_from_args(args, required=False)
    if keys is None:
        keys = draw_keys(np.random.default_rng(np.random.SeedSequence([args.seed or 0, 3])), [target.T])
    stats = revocability_experiment(target, keys, args.revoked, dataset, config, params,
                                    seed=args.seed or 0, population_features=features)
    by_kind = {s.kind: s for s in stats}
    _emit({
        "record": f"{dataset[index].record.subject_id}_{dataset[index].record.impression_id}",
        "revoked_templates": args.revoked,
        "distributions": [s.to_dict() for s in stats],
        "pseudo_imposter_minus_imposter_mean": by_kind["pseudo-imposter"].mean - by_kind["imposter"].mean,
        "pseudo_imposter_imposter_overlap": overlap_coefficient(by_kind["pseudo-imposter"], by_kind["imposter"]),
    }, args.out)
    return 0


def cmd_unlinkability(args) -> int:
    config = _sector_config(args)
    dataset = _load_dataset(args.data)
    report = unlinkability_experiment(
        dataset, (PerUserKeys(args.seed_a), PerUserKeys(args.seed_b)), config, _params(args)
    )
    for note in report.warnings:
        print(f"warning: {note}", file=sys.stderr)
    _emit(report.to_dict(), args.out)
    return 0


def cmd_diversity(args) -> int:
    _, features = _features_for(args)
    space = KeySpace(k3=args.k3_values, k4=args.k4_values,
                     rho=None if args.rho_values is None else args.rho_values)
    result = diversity_generate(features, args.count, space, args.seed, _params(args))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, (tmpl, keys) in enumerate(zip(result.templates, result.keys), start=1):
            save_template(tmpl, out / f"template_{k:03d}.cpt")
            (out / f"template_{k:03d}.keys").write_text(keys.to_line() + "\n", encoding="utf-8")
    _emit(result.to_dict(), args.out)
    return 0


def cmd_bruteforce(args) -> int:
    s = _sector_config(args).s
    _emit({"n": args.n, "sectors": s, "T": args.n * 2 * s,
           "attempts": brute_force_estimate(args.n, s)})
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coprimefp", description="Cancelable fingerprint templates via coprime mapping."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ring-scene dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--impressions", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width", type=int, default=PopulationConfig.width)
    p.add_argument("--height", type=int, default=PopulationConfig.height)
    p.add_argument("--jitter", type=float, default=PopulationConfig.jitter,
                   help="positional jitter sigma in pixels")
    p.set_defaults(func=cmd_synth)

    def record_inputs(p):
        p.add_argument("--in", dest="input", required=True, help="minutiae file (.min)")
        p.add_argument("--skel", required=True, help="thinned skeleton (.pgm)")
        _add_sector_flag(p)

    p = sub.add_parser("extract", help="compute the ridge feature matrix of one record")
    record_inputs(p)
    p.add_argument("--out", help="write the feature CSV here")
    p.add_argument("--json", action="store_true", help="print a JSON summary")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("protect", help="generate a protected template")
    record_inputs(p)
    _add_key_flags(p)
    p.add_argument("--out", required=True, help="template file (.cpt)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("match", help="score a query template against an enrolled one")
    p.add_argument("--query", required=True)
    p.add_argument("--enrolled", required=True)
    _add_key_flags(p)
    p.add_argument("--query-keys", help="read the query with this key file instead")
    p.add_argument("--threshold", type=float, help="also print accept/reject at this score")
    _add_match_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="verification-protocol EER / ROC report")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--scenario", choices=["unprotected", "same-key", "different-key", "all"],
                   default="all")
    _add_sector_flag(p)
    _add_key_flags(p)
    _add_match_flags(p)
    p.add_argument("--roc-points", type=int, default=101)
    p.add_argument("--scores-csv", help="also write raw scores as CSV")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="security analyses")
    asub = p.add_subparsers(dest="analysis", required=True)

    a = asub.add_parser("revocability", help="pseudo-imposter vs genuine/imposter distributions")
    a.add_argument("--data", required=True)
    a.add_argument("--subject", help="subject of the enrolled record (default: first record)")
    a.add_argument("--impression")
    a.add_argument("--revoked", type=int, default=100, help="number of re-issued templates")
    _add_sector_flag(a)
    _add_key_flags(a)
    _add_match_flags(a)
    a.add_argument("--out")
    a.set_defaults(func=cmd_revocability)

    a = asub.add_parser("unlinkability", help="pseudo-genuine vs pseudo-imposter overlap")
    a.add_argument("--data", required=True)
    a.add_argument("--seed-a", type=int, default=1)
    a.add_argument("--seed-b", type=int, default=2)
    _add_sector_flag(a)
    _add_match_flags(a)
    a.add_argument("--out")
    a.set_defaults(func=cmd_unlinkability)

    a = asub.add_parser("diversity", help="many templates of one finger under distinct keys")
    record_inputs(a)
    a.add_argument("--count", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--k3-values", type=int, nargs="+")
    a.add_argument("--k4-values", type=int, nargs="+")
    a.add_argument("--rho-values", type=int, nargs="+")
    _add_match_flags(a)
    a.add_argument("--out-dir", help="also save the templates and their keys here")
    a.add_argument("--out")
    a.set_defaults(func=cmd_diversity)

    a = asub.add_parser("bruteforce", help="blind-search attempt count (T^2)^2")
    a.add_argument("--n", type=int, required=True, help="minutiae count")
    _add_sector_flag(a)
    a.set_defaults(func=cmd_bruteforce)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
