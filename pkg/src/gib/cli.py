"""Command-line pipeline: generate, curate, train, evaluate, plot, report.

Every command is deterministic given its inputs and seeds, validates its
inputs, and exits nonzero with a one-line diagnostic on failure
(2 = usage, 3 = validation, 4 = numeric failure). Only ``report`` and the
simulator-side scoring in ``eval`` ever consult ground-truth labels.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, bed, scoring, segmentation, svgplot, synthgym
from .dataset import load_dataset, load_mask, save_dataset, save_mask
from .encoder import encode_dataset, load_params, save_params
from .errors import FitError, GibError, NumericError, ParseError, ValidationError
from .policy import (
    PolicyConfig,
    policy_fn,
    save_eval_report,
    save_policy_log,
    train_policy,
)

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


def _parse_error_specs(text: str, n_good: int, n_bad: int) -> list[synthgym.ErrorSpec]:
    """Parse ``kind[:magnitude[:fraction[:subtask]]]`` comma-joined specs.

    Fractions may be omitted on all specs, in which case n_bad is split
    equally (remainder to the earlier specs).
    """
    total = n_good + n_bad
    raw = []
    for chunk in text.split(","):
        fields = chunk.strip().split(":")
        if not fields or not fields[0]:
            raise ValidationError(f"empty error spec in {text!r}")
        kind = fields[0]
        magnitude = float(fields[1]) if len(fields) > 1 and fields[1] else 0.3
        fraction = float(fields[2]) if len(fields) > 2 and fields[2] else None
        subtask = int(fields[3]) if len(fields) > 3 and fields[3] else None
        raw.append((kind, magnitude, fraction, subtask))
    given = [f for _, _, f, _ in raw if f is not None]
    if given and len(given) != len(raw):
        raise ValidationError("specify fractions on all error specs or on none")
    specs = []
    if not given:
        base, rem = divmod(n_bad, len(raw))
        for i, (kind, magnitude, _, subtask) in enumerate(raw):
            count = base + (1 if i < rem else 0)
            if count == 0:
                continue
            specs.append(
                synthgym.ErrorSpec(kind, magnitude, fraction=count / total, subtask=subtask)
            )
    else:
        specs = [
            synthgym.ErrorSpec(kind, magnitude, fraction=f, subtask=subtask)
            for kind, magnitude, f, subtask in raw
        ]
    return specs


def _cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    errors = (
        _parse_error_specs(args.errors, args.good, args.bad) if args.errors else None
    )
    dataset, info = synthgym.generate_dataset(
        args.scenario, args.good, args.bad, errors, noise_scale=args.noise, seed=args.seed
    )
    save_dataset(dataset, out / "dataset.jsonl")
    synthgym.save_truth_sidecar(dataset, info, out / "truth.csv")
    print(f"wrote {len(dataset)} trajectories to {out / 'dataset.jsonl'}")
    return 0


def _bed_config(args) -> bed.BedConfig:
    values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            values.update(json.load(fh))
    for key in ("m", "epochs", "seed", "step_size", "c", "h_coef", "q",
                "lambda_count", "hidden", "latent", "resample_len"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return bed.BedConfig(**values)
    except TypeError as exc:
        raise ValidationError(f"bad stage-1 config: {exc}") from exc


def _cmd_train_bed(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.data).without_truth()
    cfg = _bed_config(args)
    result = bed.train_bed(dataset, cfg)
    save_params(result.params, out / "encoder.bin")
    bed.save_weights(result.weights, out / "weights.csv")
    bed.save_loss_log(result.log, out / "bed_loss.csv")
    n_good = int(result.weights.binary.sum())
    print(f"stage 1 kept {n_good}/{len(dataset)} trajectories (binary weight 1)")
    return 0


def _cmd_segment(args) -> int:
    dataset = load_dataset(args.data).without_truth()
    annotations = None
    if args.annotations:
        annotated = segmentation.load_segmentations(args.annotations, dataset, args.k)
        annotations = {tid: seg.boundaries for tid, seg in annotated.items()}
    segs = segmentation.segment_dataset(
        dataset, args.k, height_threshold=args.height_threshold, annotations=annotations
    )
    segmentation.save_segmentations(segs, args.out)
    n_bounds = sum(len(s.boundaries) for s in segs.values())
    print(f"wrote {n_bounds} boundaries for {len(segs)} trajectories to {args.out}")
    return 0


def _cmd_score(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.data).without_truth()
    params = load_params(args.encoder)
    weights = bed.load_weights(args.weights)
    segs = segmentation.load_segmentations(args.segs, dataset, args.k)
    latents = encode_dataset(params, dataset)
    gaussians = scoring.fit_all_gaussians(
        latents, segs, weights, args.k, epsilon=args.epsilon
    )
    table, traces = scoring.score_subtasks(latents, segs, gaussians)
    scoring.save_score_table(table, out / "scores.csv")
    scoring.save_traces(traces, out / "traces.csv")
    keys, features = baselines.segment_features(latents, segs)
    baselines.save_features(keys, features, out / "features.csv")
    print(f"scored {len(table.entries)} subtasks into {out}")
    return 0


def _cmd_mask(args) -> int:
    if args.method == "gib":
        table = scoring.load_score_table(args.scores, k_expected=args.k)
        mask = scoring.build_mask(table, args.rho)
        save_mask(mask, args.out)
    else:
        keys, features = baselines.load_features(args.scores)
        if args.method == "lof":
            values = baselines.lof_scores(features, args.k_neighbors)
        else:
            values = baselines.knn_outlier_scores(features, args.k_neighbors)
        entries = tuple(
            scoring.ScoreEntry(tid, j, float(v)) for (tid, j), v in zip(keys, values)
        )
        k = args.k if args.k is not None else max(j for _, j in keys) + 1
        table = scoring.ScoreTable(
            entries=entries,
            trajectory_ids=tuple(sorted({tid for tid, _ in keys})),
            k_expected=k,
        )
        mask = scoring.build_mask(table, args.rho)
        save_mask(mask, args.out, method=args.method)
    pruned = sum(1 for e in mask.entries if e.present and e.beta == 0)
    print(f"masked {pruned} subtasks (rho={args.rho}) into {args.out}")
    return 0


def _policy_config(args) -> PolicyConfig:
    values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            values.update(json.load(fh))
    for key in ("epochs", "step_size", "seed", "hidden", "latent"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return PolicyConfig(**values)
    except TypeError as exc:
        raise ValidationError(f"bad policy config: {exc}") from exc


def _cmd_train_policy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.data).without_truth()
    cfg = _policy_config(args)
    if args.mask == "uniform":
        mask, segs = None, None
    else:
        mask = load_mask(args.mask)
        if not args.segs:
            raise ValidationError("--segs is required when applying a mask")
        segs = segmentation.load_segmentations(args.segs, dataset, args.k)
    result = train_policy(dataset, mask, cfg, segs)
    save_params(result.params, out / "policy.bin")
    save_policy_log(result.log, out / "policy_loss.csv")
    print(f"trained policy ({cfg.epochs} epochs, final loss {result.log[-1]:.6g})")
    return 0


def _cmd_eval(args) -> int:
    params = load_params(args.policy)
    result = synthgym.evaluate_policy(
        policy_fn(params), args.scenario, args.rollouts, horizon=args.horizon, seed=args.seed
    )
    save_eval_report([(args.label, result, args.seed)], args.out)
    subs = " ".join(f"{r:.2f}" for r in result.subtask_rates)
    print(f"{args.label}: subtasks [{subs}] full {result.full_rate:.2f}")
    return 0


def _load_boundaries_for(path, trajectory_id: str) -> list[int]:
    import csv

    bounds = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "boundary_index"]:
            raise ParseError(f"unexpected segmentation header: {header}")
        for row in reader:
            if row and row[0] == trajectory_id:
                bounds.append(int(row[1]))
    return sorted(bounds)


def _cmd_plot_trace(args) -> int:
    trace = scoring.load_trace(args.trace, args.traj)
    vlines = _load_boundaries_for(args.segs, args.traj) if args.segs else []
    svgplot.svg_line_plot(
        args.out,
        trace.t,
        trace.distance,
        title=f"Deviation trace: {args.traj}",
        xlabel="timestep",
        ylabel="Mahalanobis distance",
        vlines=vlines,
    )
    print(f"wrote trace plot to {args.out}")
    return 0


def run_pipeline_once(
    dataset, k: int, m: float, rho: int, seed: int, policy_epochs: int = 1500
):
    """Stage 1 + stage 2 + masked policy training on an in-memory dataset.

    Returns (mask, policy params). Shared by sweep-rho and the test suite.
    """
    dataset = dataset.without_truth()
    cfg = bed.BedConfig(m=m, seed=seed)
    result = bed.train_bed(dataset, cfg)
    segs = segmentation.segment_dataset(dataset, k)
    latents = encode_dataset(result.params, dataset)
    gaussians = scoring.fit_all_gaussians(latents, segs, result.weights, k)
    table, _ = scoring.score_subtasks(latents, segs, gaussians)
    mask = scoring.build_mask(table, rho)
    pcfg = PolicyConfig(seed=seed, epochs=policy_epochs)
    trained = train_policy(dataset, mask, pcfg, segs)
    return mask, trained.params


def _cmd_sweep_rho(args) -> int:
    dataset = load_dataset(args.data).without_truth()
    rhos = [int(x) for x in args.rhos.split(",") if x != ""]
    seeds = [int(x) for x in args.seeds.split(",") if x != ""]
    rows = []
    for seed in seeds:
        cfg = bed.BedConfig(m=args.m, seed=seed)
        result = bed.train_bed(dataset, cfg)
        segs = segmentation.segment_dataset(dataset, args.k)
        latents = encode_dataset(result.params, dataset)
        gaussians = scoring.fit_all_gaussians(latents, segs, result.weights, args.k)
        table, _ = scoring.score_subtasks(latents, segs, gaussians)
        for rho in rhos:
            mask = scoring.build_mask(table, rho)
            trained = train_policy(dataset, mask, PolicyConfig(seed=seed), segs)
            evaluation = synthgym.evaluate_policy(
                policy_fn(trained.params),
                args.scenario,
                args.rollouts,
                horizon=args.horizon,
                seed=seed,
            )
            rows.append((rho, seed, evaluation.full_rate))
            print(f"rho={rho} seed={seed} full={evaluation.full_rate:.2f}")
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rho,seed,full_success\n")
        for rho, seed, rate in rows:
            fh.write(f"{rho},{seed},{rate:.17g}\n")
    means = [float(np.mean([r for rho2, _, r in rows if rho2 == rho])) for rho in rhos]
    svgplot.svg_line_plot(
        out.with_suffix(".svg"),
        rhos,
        means,
        title="Full-task success vs pruning budget",
        xlabel="rho",
        ylabel="success rate",
    )
    return 0


def _metrics(predicted_bad: set, truth_bad: set) -> tuple[float, float]:
    tp = len(predicted_bad & truth_bad)
    precision = tp / len(predicted_bad) if predicted_bad else 1.0
    recall = tp / len(truth_bad) if truth_bad else 1.0
    return precision, recall


def _cmd_report(args) -> int:
    d = Path(args.dir)
    lines = ["# Curation report", ""]
    truth_path = d / "truth.csv"
    truth = synthgym.load_truth_sidecar(truth_path) if truth_path.exists() else None

    weights_path = d / "weights.csv"
    if truth and weights_path.exists():
        weights = bed.load_weights(weights_path)
        binary = weights.binary_lookup()
        hits = sum(1 for tid, rec in truth.items() if (binary.get(tid, 0) == 1) == rec["good"])
        pred_bad = {tid for tid, b in binary.items() if b == 0}
        true_bad = {tid for tid, rec in truth.items() if not rec["good"]}
        precision, recall = _metrics(pred_bad, true_bad)
        lines += [
            "## Stage 1: trajectory weights",
            "",
            f"- accuracy vs truth: {hits / len(truth):.3f}",
            f"- bad-demo precision: {precision:.3f}",
            f"- bad-demo recall: {recall:.3f}",
            "",
        ]

    mask_path = d / "mask.csv"
    if truth and mask_path.exists():
        mask = load_mask(mask_path)
        pred_bad = {
            (e.trajectory_id, e.subtask_index)
            for e in mask.entries
            if e.present and e.beta == 0
        }
        true_bad = {
            (tid, j) for tid, rec in truth.items() for j in rec["bad_subtasks"]
        }
        precision, recall = _metrics(pred_bad, true_bad)
        lines += [
            "## Stage 2: subtask mask",
            "",
            f"- masked subtasks: {len(pred_bad)} (rho={mask.rho})",
            f"- subtask precision: {precision:.3f}",
            f"- subtask recall: {recall:.3f}",
            "",
        ]

    eval_files = sorted(d.glob("eval*.csv")) + sorted(d.glob("success*.csv"))
    if eval_files:
        lines += ["## Policy evaluation", "", "| method | sub1 | sub2 | sub3 | full | seed |",
                  "|---|---|---|---|---|---|"]
        for path in eval_files:
            with open(path, "r", encoding="utf-8") as fh:
                header = fh.readline()
                if not header.startswith("method,"):
                    continue
                for line in fh:
                    cells = line.strip().split(",")
                    if len(cells) == 6:
                        lines.append("| " + " | ".join(c or "-" for c in cells) + " |")
        lines.append("")

    if len(lines) <= 2:
        raise ValidationError(f"no reportable artifacts found in {d}")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
    print(f"wrote report to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gib", description="Demonstration curation pipeline and benchmark"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset with labeled errors")
    p.add_argument("--scenario", choices=synthgym.SCENARIOS, default="drawer3")
    p.add_argument("--good", type=int, required=True)
    p.add_argument("--bad", type=int, required=True)
    p.add_argument(
        "--errors",
        default="",
        help="comma-joined kind[:magnitude[:fraction[:subtask]]] specs",
    )
    p.add_argument("--noise", type=float, default=0.004)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train-bed", help="learn per-trajectory weights (stage 1)")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="", help="JSON file of stage-1 config fields")
    p.add_argument("--m", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--step-size", dest="step_size", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_bed)

    p = sub.add_parser("segment", help="split trajectories into subtasks")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--annotations", default="", help="boundaries CSV to use verbatim")
    p.add_argument("--height-threshold", dest="height_threshold", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("score", help="fit subtask Gaussians and score all subtasks")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--segs", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=scoring.DEFAULT_SHRINKAGE)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("mask", help="build a beta mask from scores or features")
    p.add_argument("--scores", required=True, help="scores.csv (gib) or features.csv (lof/knn)")
    p.add_argument("--rho", type=int, required=True)
    p.add_argument("--method", choices=("gib", "lof", "knn"), default="gib")
    p.add_argument("--k", type=int, default=None, help="expected subtask count")
    p.add_argument("--k-neighbors", dest="k_neighbors", type=int,
                   default=baselines.DEFAULT_K_NEIGHBORS)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_mask)

    p = sub.add_parser("train-policy", help="behavior cloning on masked data")
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True, help="mask CSV path or 'uniform'")
    p.add_argument("--segs", default="")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--config", default="", help="JSON file of policy config fields")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--step-size", dest="step_size", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train_policy)

    p = sub.add_parser("eval", help="roll out a policy and report success rates")
    p.add_argument("--policy", required=True)
    p.add_argument("--scenario", choices=synthgym.SCENARIOS, default="drawer3")
    p.add_argument("--rollouts", type=int, required=True)
    p.add_argument("--horizon", type=int, default=140)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", default="policy")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("plot-trace", help="plot a deviation trace as SVG")
    p.add_argument("--trace", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--segs", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot_trace)

    p = sub.add_parser("sweep-rho", help="sweep the pruning budget end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--rhos", required=True, help="comma-joined rho values")
    p.add_argument("--seeds", required=True, help="comma-joined seeds")
    p.add_argument("--scenario", choices=synthgym.SCENARIOS, default="drawer3")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--m", type=float, default=0.75)
    p.add_argument("--rollouts", type=int, default=50)
    p.add_argument("--horizon", type=int, default=140)
    p.add_argument("--out", required=True, help="CSV path; the SVG lands beside it")
    p.set_defaults(fn=_cmd_sweep_rho)

    p = sub.add_parser("report", help="summarize artifacts against ground truth")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
