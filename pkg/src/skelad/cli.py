"""Command-line surface: synth, train, score, eval, inspect.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import jigsaw
from .errors import (ConfigError, ContractViolation, DataError, EvalError,
                     ScoringError, TrainingError)
from .evaluate import (auroc, emit_report, frame_scores, param_count,
                       read_score_csv, write_score_csv)
from .graph import build_adjacency
from .pipeline import Model, parse_config_file, score_dataset, train, write_loss_history
from .posedata import (AnomalySpan, SyntheticSpec, generate_synthetic,
                       load_label_file, load_pose_dataset, write_label_file,
                       write_pose_file)
from .rng import RngStream


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="skelad", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic pose dataset")
    sp.add_argument("--spec", required=True, help="JSON recipe file")
    sp.add_argument("--out", required=True, help="output directory")

    tp = sub.add_parser("train", help="train a model on pose files")
    tp.add_argument("--config", required=True, help="key = value config file")
    tp.add_argument("--data", required=True, help="directory of *.poses files")
    tp.add_argument("--out", required=True, help="checkpoint output path")

    cp = sub.add_parser("score", help="score pose files with a checkpoint")
    cp.add_argument("--ckpt", required=True)
    cp.add_argument("--data", required=True)
    cp.add_argument("--out", required=True, help="per-frame score CSV path")
    cp.add_argument("--agg", choices=["min", "mean", "median", "max"], default=None)
    cp.add_argument("--M", type=int, default=None)
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--workers", type=int, default=1)

    ep = sub.add_parser("eval", help="AUROC and report from scores + labels")
    ep.add_argument("--scores", required=True)
    ep.add_argument("--labels", required=True)
    ep.add_argument("--out", required=True, help="report output directory")

    ip = sub.add_parser("inspect", help="inspect a checkpoint")
    ip.add_argument("--ckpt", required=True)
    ip.add_argument("--schedule", action="store_true")
    ip.add_argument("--graph", action="store_true")
    ip.add_argument("--params", action="store_true")
    return p


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _spec_from_json(obj: dict) -> SyntheticSpec:
    anomalies = [AnomalySpan(**a) for a in obj.pop("anomalies", [])]
    return SyntheticSpec(anomalies=anomalies, **obj)


def cmd_synth(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise DataError(f"spec file not found: {spec_path}")
    try:
        obj = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{spec_path}: invalid JSON: {exc}") from exc
    video_objs = obj["videos"] if isinstance(obj, dict) and "videos" in obj else [obj]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_tracks, all_labels = [], {}
    n_joints = None
    for vo in video_objs:
        spec = _spec_from_json(dict(vo))
        if n_joints is None:
            n_joints = spec.n_joints
        elif n_joints != spec.n_joints:
            raise ConfigError("all videos in one dataset must share n_joints")
        tracks, labels = generate_synthetic(spec)
        all_tracks.extend(tracks)
        all_labels.update(labels)

    write_pose_file(all_tracks, out / "data.poses", n_joints, 2)
    write_label_file(all_labels, out / "data.labels")
    (out / "spec.json").write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    n_anom = sum(1 for v in all_labels.values() if v)
    print(f"wrote {len(all_tracks)} tracks, {len(all_labels)} labeled frames "
          f"({n_anom} anomalous) to {out}")
    return 0


def _load_tracks(data_dir: str):
    data_dir = Path(data_dir)
    pose_files = sorted(data_dir.glob("*.poses"))
    if not pose_files:
        raise DataError(f"no *.poses files in {data_dir}")
    tracks = []
    for pf in pose_files:
        t, _ = load_pose_dataset(pf, with_labels=False)
        tracks.extend(t)
    return tracks


def cmd_train(args) -> int:
    config = parse_config_file(args.config)
    tracks = _load_tracks(args.data)
    model, history = train(tracks, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    losses_path = out.with_name(out.stem + ".losses.csv")
    write_loss_history(history, losses_path)
    print(f"trained {config.epochs} epochs; final losses: "
          f"total={history[-1]['total']:.6f} graph={history[-1]['graph']:.6f} "
          f"puzzle={history[-1]['puzzle']:.6f} diffusion={history[-1]['diffusion']:.6f}")
    print(f"checkpoint: {out}")
    print(f"loss history: {losses_path}")
    return 0


def cmd_score(args) -> int:
    model = Model.load(args.ckpt)
    tracks = _load_tracks(args.data)
    records = score_dataset(model, tracks, M=args.M, strategy=args.agg,
                            seed=args.seed, workers=args.workers)
    lengths: dict[str, int] = {}
    for tr in tracks:
        lengths[tr.video_id] = max(lengths.get(tr.video_id, 0),
                                   tr.start_frame + tr.n_frames)
    series = frame_scores(records, lengths, model.config.L, model.config.l)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_score_csv(series, out)
    print(f"scored {len(records)} windows across {len(series)} videos -> {out}")
    return 0


def cmd_eval(args) -> int:
    series = read_score_csv(args.scores)
    labels = load_label_file(args.labels)
    roc = auroc(series, labels)
    paths = emit_report(series, labels, roc, args.out)
    print(f"AUROC: {roc.auroc:.6f} "
          f"(positives={roc.n_positive}, negatives={roc.n_negative})")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_inspect(args) -> int:
    model = Model.load(args.ckpt)
    sections = [s for s, on in (("schedule", args.schedule), ("graph", args.graph),
                                ("params", args.params)) if on]
    if not sections:
        sections = ["schedule", "graph", "params"]

    if "schedule" in sections:
        sched = model.schedule
        print(f"schedule: kind={sched.kind} T={sched.T}")
        print("t,beta,alpha,alpha_bar,beta_bar")
        for t in range(1, sched.T + 1):
            print(f"{t},{sched.beta[t-1]!r},{sched.alpha[t-1]!r},"
                  f"{sched.alpha_bar[t-1]!r},{sched.beta_bar[t-1]!r}")

    if "graph" in sections:
        A = build_adjacency(model.V, model.config.delta)
        print(f"graph: K={A.n_nodes} delta={A.delta}")
        for k in range(A.n_nodes):
            nbrs = ",".join(str(n) for n in A.neighbors(k))
            print(f"node {k} -> {nbrs}")
        partition = jigsaw.extract_subgraphs(A, model.config.eta)
        print(f"partition (eta={model.config.eta}): sizes={partition.sizes()}")
        for k in range(A.n_nodes):
            print(f"node {k}: subgraph {partition.assignment[k]}")
        if model.config.puzzle_kind == "inter":
            _, move = jigsaw.shuffle_inter(A, partition, RngStream(model.config.seed))
        else:
            _, move = jigsaw.shuffle_intra(A, partition, RngStream(model.config.seed))
        print(f"sample move: kind={move.kind} subgraphs={move.subgraphs} "
              f"class={move.class_id}/{move.n_classes}")
        print(f"permutation cycles: {_cycles(move.perm)}")

    if "params" in sections:
        total, by_module = param_count(model.parameters())
        print(f"trainable parameters: {total}")
        for module, n in sorted(by_module.items()):
            print(f"  {module}: {n}")
    return 0


def _cycles(perm: np.ndarray) -> str:
    seen = set()
    cycles = []
    for start in range(len(perm)):
        if start in seen or perm[start] == start:
            seen.add(start)
            continue
        cyc = [start]
        seen.add(start)
        nxt = int(perm[start])
        while nxt != start:
            cyc.append(nxt)
            seen.add(nxt)
            nxt = int(perm[nxt])
        cycles.append("(" + " ".join(str(c) for c in cyc) + ")")
    return " ".join(cycles) if cycles else "(identity)"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "synth": cmd_synth,
            "train": cmd_train,
            "score": cmd_score,
            "eval": cmd_eval,
            "inspect": cmd_inspect,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, EvalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ScoringError, ContractViolation, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
