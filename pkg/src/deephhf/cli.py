"""Command-line entry point: reproducible pipelines over the package modules.

Every subcommand writes a run manifest (resolved options, seeds, versions,
config hash) next to its outputs so a run can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .clinical import assemble_pcphf_inputs, load_coefficients, pcphf_score
from .cohort import (
    HF,
    extract_endpoint,
    label_exams,
    load_events,
    load_exams,
    read_labels,
    split_cohort,
    write_labels,
)
from .errors import (
    DeepHHFError,
    DegenerateClusters,
    MissingVariable,
    NoBeatsFound,
    TooFewBeats,
)
from .evaluation import (
    STOP_HF_IRR,
    auroc,
    bootstrap_auroc,
    compare_models,
    events_by_horizon,
    incidence_and_nns,
    kaplan_meier,
    logrank,
    odds_ratio,
    pr_curve,
    risk_groups,
    survival_rows,
)
from .explain import (
    circadian_density,
    cluster_beats,
    extract_beats_at_positions,
    grad_attention_rollout,
    high_attention_positions,
)
from .model import (
    ModelConfig,
    encoder_from_checkpoint,
    head_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .signal_io import SignalStore
from .synthcohort import CohortSpec, load_patients, make_synthetic_cohort
from .training import (
    TrainConfig,
    score_recording,
    train_step1,
    train_step2,
    write_metrics,
)

TRAIN_KEYS = ("lr", "batch_size", "patience", "max_epochs", "seed", "score_aggregation")
MODEL_KEYS = ("enc_first_kernel", "enc_filters", "enc_strides", "dropout_p", "feat_dim",
              "d_model", "n_heads", "n_layers", "ff_dim", "seq_len", "input_scale_uv")


def read_config_file(path) -> dict:
    """key=value text config; '#' starts a comment."""
    fields = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.split(","))
    return value


def resolve_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Config file values first, command-line flags win."""
    model_kwargs = asdict(ModelConfig())
    train_kwargs = {k: v for k, v in vars(TrainConfig()).items()}
    if getattr(args, "config", None):
        for key, value in read_config_file(args.config).items():
            if key in model_kwargs:
                model_kwargs[key] = _coerce(value, model_kwargs[key])
            elif key in train_kwargs:
                like = train_kwargs[key] if train_kwargs[key] is not None else 0
                train_kwargs[key] = _coerce(value, like)
            else:
                raise DeepHHFError(f"unknown config key {key!r}")
    for key in MODEL_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            model_kwargs[key] = flag
    for key in TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            train_kwargs[key] = flag
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def write_manifest(out_dir, command: str, options: dict):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in sorted(options.items()) if k != "func"}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()
    manifest = {
        "command": command,
        "options": payload,
        "config_hash": digest,
        "versions": {
            "deephhf": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "written_at": datetime.now().isoformat(timespec="seconds"),
    }
    try:
        import torch
        manifest["versions"]["torch"] = torch.__version__
    except ImportError:
        pass
    (out_dir / f"run_manifest_{command.replace('-', '_')}.json").write_text(
        json.dumps(manifest, indent=2, default=str) + "\n"
    )


def _read_scores(path) -> dict:
    scores = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            value = row["score"]
            if not value.startswith("MISSING"):
                scores[row["exam_id"]] = float(value)
    return scores


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n is not None:
        n_test = max(1, round(0.3 * args.n))
        n_val = max(1, round(0.15 * (args.n - n_test)))
        n_train = args.n - n_test - n_val
    else:
        n_train, n_val, n_test = args.n_train, args.n_val, args.n_test
    spec = CohortSpec(
        n_train=n_train, n_val=n_val, n_test=n_test, seed=args.seed,
        pos_frac=args.pos_frac, noise_rms=args.noise_rms,
        pos_burst_rate=args.burst_rate,
    )
    summary = make_synthetic_cohort(args.out, spec)
    write_manifest(args.out, "synth", {**vars(args), **summary})
    print(f"wrote {summary['n_recordings']} container pairs to {args.out}")
    return 0


def cmd_label(args) -> int:
    timelines = load_events(args.data)
    exams = load_exams(Path(args.data) / "exams.csv")
    endpoints = {pid: ep for pid, tl in timelines.items()
                 if (ep := extract_endpoint(tl)) is not None}
    labels = label_exams(exams, endpoints)
    write_labels(labels, args.out)
    write_manifest(Path(args.out).parent, "label", vars(args))
    n_pos = sum(1 for lab in labels if lab.label == HF)
    print(f"labeled {len(labels)} exams ({n_pos} positive) -> {args.out}")
    return 0


def cmd_split(args) -> int:
    labels = split_cohort(read_labels(args.labels), args.val_frac, args.seed)
    out = args.out or args.labels
    write_labels(labels, out)
    write_manifest(Path(out).parent, "split", vars(args))
    counts = {s: sum(1 for lab in labels if lab.split == s)
              for s in ("train", "validation", "test")}
    print(f"split -> {counts}")
    return 0


def cmd_train_encoder(args) -> int:
    model_config, train_config = resolve_configs(args)
    store = SignalStore(args.data)
    labels = read_labels(args.labels)
    outcome = train_step1(labels, store, model_config, train_config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = save_checkpoint(
        out_dir / "encoder.ckpt", model_config, outcome.encoder,
        meta={"step": 1, "pos_weight": outcome.pos_weight,
              "best_val_auroc": outcome.best_val_auroc,
              "score_aggregation": train_config.score_aggregation},
    )
    write_metrics(out_dir / "encoder_metrics.csv", outcome.metrics)
    write_manifest(out_dir, "train-encoder", vars(args))
    print(f"encoder -> {ckpt_path} (best val AUROC {outcome.best_val_auroc:.4f})")
    return 0


def cmd_train_head(args) -> int:
    _, train_config = resolve_configs(args)
    ckpt = load_checkpoint(args.encoder)
    store = SignalStore(args.data)
    labels = read_labels(args.labels)
    outcome = train_step2(ckpt, labels, store, train_config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = save_checkpoint(
        out_dir / "deephhf.ckpt", ckpt.config, outcome.encoder, outcome.head,
        meta={"step": 2, "pos_weight": outcome.pos_weight,
              "best_val_auroc": outcome.best_val_auroc},
    )
    write_metrics(out_dir / "head_metrics.csv", outcome.metrics)
    write_manifest(out_dir, "train-head", vars(args))
    print(f"model -> {ckpt_path} (best val AUROC {outcome.best_val_auroc:.4f})")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    encoder = encoder_from_checkpoint(ckpt)
    head = head_from_checkpoint(ckpt)
    store = SignalStore(args.data)
    if args.labels:
        exam_ids = [lab.exam_id for lab in read_labels(args.labels)
                    if args.split in (None, lab.split)]
    else:
        exam_ids = store.exam_ids()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exam_id", "score"])
        for exam_id in exam_ids:
            p = score_recording(encoder, head, store.load(exam_id))
            writer.writerow([exam_id, f"{p:.10f}"])
    write_manifest(out.parent, "score", vars(args))
    print(f"scored {len(exam_ids)} recordings -> {out}")
    return 0


def cmd_explain(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    encoder = encoder_from_checkpoint(ckpt)
    head = head_from_checkpoint(ckpt)
    store = SignalStore(args.data)
    labels = read_labels(args.labels)
    targets = [lab for lab in labels
               if lab.label == HF and args.split in (None, lab.split)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = []
    all_beats = []
    for lab in targets:
        rec = store.load(lab.exam_id)
        profile = grad_attention_rollout(encoder, head, rec)
        profiles.append(profile)
        with (out_dir / f"profile_{lab.exam_id}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position", "wall_clock", "mass"])
            for i, (when, mass) in enumerate(zip(profile.wall_clock, profile.mass)):
                writer.writerow([i, when.isoformat(), f"{mass:.10g}"])
        try:
            beats = extract_beats_at_positions(rec, profile, high_attention_positions(profile))
            all_beats.append(beats)
        except NoBeatsFound:
            pass
    if not profiles:
        raise DeepHHFError("no positive recordings to explain")
    density = circadian_density(profiles, bin_min=args.bin_min)
    with (out_dir / "density.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start_min", "mass"])
        for i, mass in enumerate(density.density):
            writer.writerow([i * density.bin_min, f"{mass:.10g}"])

    clusters_payload = {"intervals": {str(c): v for c, v in density.intervals.items()}}
    if all_beats:
        beats = np.concatenate(all_beats)
        beats32 = beats.astype("<f4")
        (out_dir / "beats.f32").write_bytes(beats32.tobytes())
        (out_dir / "beats.manifest").write_text(
            f"dtype=float32_le\nshape={beats.shape[0]},{beats.shape[1]}\nunit=uV\n"
        )
        try:
            result = cluster_beats(beats, seed=args.seed)
            clusters_payload.update({
                "k": result.k,
                "selected_k": result.selected_k,
                "sizes": result.sizes,
                "silhouette": {str(k): v for k, v in result.silhouette.items()},
                "averaged_beats": result.averaged_beats.tolist(),
            })
        except (TooFewBeats, DegenerateClusters) as exc:
            clusters_payload["error"] = str(exc)
    (out_dir / "clusters.json").write_text(json.dumps(clusters_payload, indent=2) + "\n")
    write_manifest(out_dir, "explain", vars(args))
    print(f"explained {len(profiles)} recordings -> {out_dir}")
    return 0


def cmd_pcphf(args) -> int:
    coeffs = load_coefficients(args.coefficients)
    timelines = load_events(args.data)
    patients = load_patients(args.data)
    exams = load_exams(Path(args.data) / "exams.csv")
    store = SignalStore(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_scored = 0
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exam_id", "score"])
        for exam_id, patient_id, exam_date in exams:
            try:
                rec = store.load(exam_id)
                inputs = assemble_pcphf_inputs(
                    timelines.get(patient_id, []), patients.get(patient_id, {}),
                    exam_date, rec,
                )
                writer.writerow([exam_id, f"{pcphf_score(inputs, coeffs):.10f}"])
                n_scored += 1
            except MissingVariable as exc:
                writer.writerow([exam_id, "MISSING:" + ",".join(exc.missing)])
    write_manifest(out.parent, "pcphf", {**vars(args), "coeff_hash": coeffs.file_hash})
    print(f"pcphf scored {n_scored}/{len(exams)} exams -> {out}")
    return 0


def _evaluate_core(scores_map, labels, out_dir, seed, data_dir=None, horizon_days=1826):
    rows = [(lab, scores_map[lab.exam_id]) for lab in labels if lab.exam_id in scores_map]
    if not rows:
        raise DeepHHFError("no scored exams intersect the label file")
    scores = np.array([s for _, s in rows])
    y = np.array([1 if lab.label == HF else 0 for lab, _ in rows])
    report = {"n": len(rows), "n_pos": int(y.sum()), "auroc": auroc(scores, y)}

    mean, ci, dist = bootstrap_auroc(scores, y, seed=seed)
    report["bootstrap"] = {"mean": mean, "ci95": list(ci)}
    np.savetxt(out_dir / "bootstrap.csv", dist, header="auroc", comments="")

    auprc, recall, precision = pr_curve(scores, y)
    report["auprc"] = auprc
    with (out_dir / "pr.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        writer.writerows(zip(recall, precision))

    # ROC curve by threshold sweep
    thresholds = np.unique(scores)[::-1]
    with (out_dir / "roc.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for t in thresholds:
            flag = scores >= t
            tpr = (flag & (y == 1)).sum() / max(y.sum(), 1)
            fpr = (flag & (y == 0)).sum() / max((1 - y).sum(), 1)
            writer.writerow([f"{t:.10g}", f"{fpr:.6f}", f"{tpr:.6f}"])

    groups = risk_groups(scores, y)
    report["risk_thresholds"] = {"t70": groups.t70, "t90": groups.t90}
    report["risk_group_sizes"] = {
        name: int((groups.groups == name).sum()) for name in ("low", "moderate", "high")
    }

    if data_dir is not None:
        timelines = load_events(data_dir)
        labs = [lab for lab, _ in rows]
        for endpoint in ("death", "death_or_admission"):
            surv = survival_rows(labs, timelines, endpoint=endpoint)
            report.setdefault("survival", {})[endpoint] = {}
            high = groups.groups == "high"
            rows_high = [surv[i] for i in np.nonzero(high)[0]]
            rows_rest = [surv[i] for i in np.nonzero(~high)[0]]
            for name, sel_rows in (("high", rows_high), ("low_moderate", rows_rest)):
                times, surv_curve = kaplan_meier(sel_rows)
                with (out_dir / f"km_{endpoint}_{name}.csv").open("w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["time_days", "survival"])
                    writer.writerows(zip(times, surv_curve))
            if rows_high and rows_rest:
                chi2, p = logrank(rows_high, rows_rest)
                ev_h, n_h = events_by_horizon(rows_high, horizon_days)
                ev_r, n_r = events_by_horizon(rows_rest, horizon_days)
                entry = report["survival"][endpoint]
                entry["logrank"] = {"chi2": chi2, "p": p}
                if n_h and n_r:
                    orate, corrected = odds_ratio(ev_h, n_h, ev_r, n_r)
                    entry["odds_ratio"] = {"value": orate, "corrected": corrected,
                                           "horizon_days": horizon_days}
                # screening yield per risk group
                nns = {}
                for name, sel in (("all", np.ones(len(surv), bool)),
                                  ("moderate", groups.groups == "moderate"),
                                  ("high", high)):
                    sel_rows = [surv[i] for i in np.nonzero(sel)[0]]
                    person_years = sum(t for t, _ in sel_rows) / 365.25
                    events = sum(e for _, e in sel_rows)
                    if person_years > 0 and events > 0:
                        rate, n_screen = incidence_and_nns(person_years, events, STOP_HF_IRR)
                        nns[name] = {"rate_per_1000py": rate, "nns": n_screen}
                entry["screening"] = nns
    return report, dist


def cmd_evaluate(args) -> int:
    labels = read_labels(args.labels)
    if args.split:
        labels = [lab for lab in labels if lab.split == args.split]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, _ = _evaluate_core(
        _read_scores(args.scores), labels, out_dir, args.seed,
        data_dir=args.data, horizon_days=args.horizon_days,
    )
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(out_dir, "evaluate", vars(args))
    print(json.dumps({"auroc": report["auroc"], "bootstrap": report["bootstrap"]}, indent=2))
    return 0


def cmd_report(args) -> int:
    """Merge the model evaluation with the clinical-score baseline."""
    labels = read_labels(args.labels)
    if args.split:
        labels = [lab for lab in labels if lab.split == args.split]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report, model_dist = _evaluate_core(
        _read_scores(args.scores), labels, out_dir, args.seed,
        data_dir=args.data, horizon_days=args.horizon_days,
    )
    merged = {"deephhf": report}
    if args.pcphf_scores:
        pcphf_map = _read_scores(args.pcphf_scores)
        shared = [lab for lab in labels if lab.exam_id in pcphf_map]
        y = np.array([1 if lab.label == HF else 0 for lab in shared])
        if shared and 0 < y.sum() < len(y):
            scores = np.array([pcphf_map[lab.exam_id] for lab in shared])
            mean, ci, dist = bootstrap_auroc(scores, y, seed=args.seed)
            t, p = compare_models(model_dist, dist)
            merged["pcphf"] = {
                "n": len(shared),
                "auroc": auroc(scores, y),
                "bootstrap": {"mean": mean, "ci95": list(ci)},
            }
            merged["model_vs_pcphf"] = {"t": t, "p": p, "significant": p < 0.05}
        else:
            merged["pcphf"] = {
                "n": len(shared),
                "note": "skipped: scored exams cover a single class",
            }
    (out_dir / "report.json").write_text(json.dumps(merged, indent=2) + "\n")
    write_manifest(out_dir, "report", vars(args))
    print(f"report -> {out_dir / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="key=value config file (flags win)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--score-aggregation", dest="score_aggregation",
                   choices=("mean_logit", "mean_prob", "max_logit"))


def _add_model_flags(p):
    p.add_argument("--enc-filters", dest="enc_filters", type=int)
    p.add_argument("--feat-dim", dest="feat_dim", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--ff-dim", dest="ff_dim", type=int)
    p.add_argument("--dropout-p", dest="dropout_p", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deephhf",
        description="Heart-failure risk pipeline over 24-hour single-lead Holter ECG",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="cap torch worker threads")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="total recordings (3:1 train+val to test)")
    p.add_argument("--n-train", dest="n_train", type=int, default=40)
    p.add_argument("--n-val", dest="n_val", type=int, default=10)
    p.add_argument("--n-test", dest="n_test", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--pos-frac", dest="pos_frac", type=float, default=0.35)
    p.add_argument("--burst-rate", dest="burst_rate", type=float, default=2.0)
    p.add_argument("--noise-rms", dest="noise_rms", type=float, default=20.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="label exams from EMR tables")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("split", help="assign train/validation/test")
    p.add_argument("--labels", required=True)
    p.add_argument("--val-frac", dest="val_frac", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="defaults to rewriting --labels")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-encoder", help="step 1: train the window encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("train-head", help="step 2: train the sequential head")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--encoder", required=True, help="encoder checkpoint manifest")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_head)

    p = sub.add_parser("score", help="score recordings with a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--split", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("explain", help="attention rollout, circadian density, beat clusters")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--bin-min", dest="bin_min", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("pcphf", help="clinical baseline risk score")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--coefficients", help="coefficient table (defaults to packaged placeholder)")
    p.set_defaults(func=cmd_pcphf)

    p = sub.add_parser("evaluate", help="ROC/PR, bootstrap, risk groups, survival")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--data", help="EMR dir for survival analyses")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon-days", dest="horizon_days", type=int, default=1826)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combined model vs clinical-score report")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--pcphf-scores", dest="pcphf_scores")
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon-days", dest="horizon_days", type=int, default=1826)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", None):
        import torch
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (DeepHHFError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
