"""Command-line entry point: ``poisonrec <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attack, detection, evaluation, graph, influence, mf, ratings


def _load(path, r_max):
    return ratings.ingest(path, r_max)


def _fake_users(ds, prefix):
    return np.array([k for k, uid in enumerate(ds.user_ids) if uid.startswith(prefix)], dtype=np.int64)


def cmd_ingest(a):
    ds = _load(a.data, a.r_max)
    print(f"users {ds.n_users} items {ds.n_items} ratings {ds.n_edges} r_max {ds.r_max}")
    if a.out:
        ratings.serialize(ds, a.out)
    return 0


def cmd_synth(a):
    ds = ratings.synth(a.seed, a.users, a.items, a.density, a.rank, a.r_max,
                       long_tail=not a.uniform)
    ratings.serialize(ds, a.out)
    print(f"wrote {ds.n_edges} ratings to {a.out}")
    return 0


def cmd_train(a):
    ds = _load(a.data, a.r_max)
    model = mf.train(ds, a.d, a.lam, a.sweeps, a.seed)
    rx, ry = mf.stationarity_residuals(model, ds)
    mf.save_model(model, a.out, binary=a.out.endswith(".npz"))
    print(f"objective {model.objective_trace[-1]:.10g} residual_x {rx:.3e} residual_y {ry:.3e}")
    return 0


def cmd_influence(a):
    ds = _load(a.data, a.r_max)
    t = ds.item_index(a.target)
    if a.graph:
        rep = graph.graph_influence_report(ds, t, a.delta, a.alpha, a.resolvent, a.taylor_order, a.weights)
    else:
        model = mf.load_model(a.model) if a.model else mf.train(ds, a.d, a.lam, a.sweeps, a.seed)
        rep = influence.influence_report(model, ds, t, a.delta, a.weights, mode=a.mode)
    text = rep.to_text(ds)
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _plan(a, ds):
    m = a.m if a.m is not None else int(round(a.size * ds.n_users))
    return attack.AttackPlan(variant=a.variant, m=m, n=a.n, eta=a.eta, b=a.b, delta=a.delta, N=a.N,
                             d=a.d, lam=a.lam, max_iter=a.max_iter, seed=a.seed)


def cmd_attack(a):
    ds = _load(a.data, a.r_max)
    t = ds.item_index(a.target)
    view = ds if a.knowledge >= 1 else ratings.partial_view(ds, t, a.knowledge).dataset()
    plan = _plan(a, ds)
    if a.recommender == "graph":
        res = attack.run_graph_attack(view, t, plan, a.alpha, id_prefix=a.prefix)
    else:
        res = attack.run_attack(view, t, plan, id_prefix=a.prefix)
    Path(a.out).write_text(attack.dumps_profiles(res.profiles, ds), encoding="utf-8")
    if a.manifest:
        Path(a.manifest).write_text(attack.manifest(res, ds), encoding="utf-8")
    print(f"wrote {len(res.profiles)} fake users to {a.out}")
    return 0


def cmd_inject(a):
    ds = _load(a.data, a.r_max)
    profiles = attack.load_profiles(a.profiles, ds)
    ratings.serialize(attack.inject(ds, profiles), a.out)
    print(f"injected {len(profiles)} users into {a.out}")
    return 0


def cmd_detect(a):
    ds = _load(a.data, a.r_max)
    fakes = _fake_users(ds, a.fake_prefix)
    normal = np.setdiff1d(np.arange(ds.n_users), fakes)
    if a.detector:
        det = detection.DetectorModel.load(a.detector)
    else:
        train_ds = _load(a.train, a.r_max) if a.train else ds
        tf = _fake_users(train_ds, a.fake_prefix)
        tn = np.setdiff1d(np.arange(train_ds.n_users), tf)
        X, y = detection.training_set(train_ds, tf, tn, a.seed)
        det = detection.train_detector(X, y, detection.DetectorConfig(seed=a.seed))
    if a.save_detector:
        det.save(a.save_detector)
    if a.features:
        labels = np.isin(np.arange(ds.n_users), fakes).astype(int)
        Path(a.features).write_text(detection.dumps_features(ds, detection.feature_matrix(ds), labels),
                                    encoding="utf-8")
    if fakes.size:
        res = detection.evaluate_fnr(det, ds, fakes, normal)
        print(f"fnr {res.fnr:.6f} balanced_accuracy {res.balanced_accuracy:.6f} flagged {res.flagged.size}")
    else:
        flagged = np.flatnonzero(det.predict(detection.feature_matrix(ds)) == 1)
        res = detection.DetectionResult(float("nan"), flagged, ds.without_users(flagged), float("nan"))
        print(f"flagged {flagged.size}")
    if a.out:
        ratings.serialize(res.filtered, a.out)
    return 0


def cmd_evaluate(a):
    ds = _load(a.data, a.r_max)
    t = ds.item_index(a.target)
    users = np.setdiff1d(np.arange(ds.n_users), _fake_users(ds, a.fake_prefix))
    if a.recommender == "graph":
        rec = graph.build_transition(ds, a.alpha)
    else:
        rec = mf.load_model(a.model) if a.model else mf.train(ds, a.d, a.lam, a.sweeps, a.seed)
    print(f"HR@{a.N} {evaluation.hit_ratio(rec, ds, t, a.N, users):.6f}")
    return 0


def cmd_experiment(a):
    raw = json.loads(Path(a.config).read_text(encoding="utf-8")) if a.config else {}
    over = {"attack": {}}
    if a.seeds:
        over["seeds"] = [int(s) for s in a.seeds.split(",")]
    if a.variants:
        over["attack"]["variants"] = a.variants.split(",")
    if a.knowledge:
        over["knowledge"] = [float(f) for f in a.knowledge.split(",")]
    for key in ("size", "n", "delta", "b", "eta"):
        if getattr(a, key) is not None:
            over["attack"][key] = getattr(a, key)
    if a.recommender:
        over["recommender"] = a.recommender
    if a.N is not None:
        over["N"] = a.N
    if a.detection:
        over["detection"] = True
    cfg = evaluation.ExperimentConfig.from_dict(evaluation._merge(raw, over))

    def progress(cell):
        if not a.quiet:
            print(f"seed {cell.seed} target {cell.target} {cell.variant} k={cell.knowledge:g}: "
                  f"{cell.status} hr {cell.hr_after}", file=sys.stderr)

    rep = evaluation.run_experiment(cfg, progress)
    rep.write(a.out)
    sys.stdout.write(rep.to_text())
    print(f"runtime {rep.runtime:.1f}s", file=sys.stderr)
    return 0 if rep.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poisonrec", description="Poisoning attacks on top-N recommenders.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def data_cmd(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("data", help="ratings file: 'user item rating' per line")
        s.add_argument("--r-max", type=int, default=5)
        s.set_defaults(fn=fn)
        return s

    def model_flags(s):
        s.add_argument("--d", type=int, default=8)
        s.add_argument("--lam", type=float, default=0.1)
        s.add_argument("--sweeps", type=int, default=30)
        s.add_argument("--seed", type=int, default=0)

    s = data_cmd("ingest", cmd_ingest, "validate a ratings file")
    s.add_argument("--out")

    s = sub.add_parser("synth", help="generate a synthetic ratings file")
    s.set_defaults(fn=cmd_synth)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--users", type=int, default=500)
    s.add_argument("--items", type=int, default=200)
    s.add_argument("--density", type=float, default=0.05)
    s.add_argument("--rank", type=int, default=8)
    s.add_argument("--r-max", type=int, default=5)
    s.add_argument("--uniform", action="store_true", help="no long-tail popularity")
    s.add_argument("--out", required=True)

    s = data_cmd("train", cmd_train, "fit the MF recommender")
    model_flags(s)
    s.add_argument("--out", required=True, help="checkpoint path (.npz for binary)")

    s = data_cmd("influence", cmd_influence, "user influence on a target item")
    model_flags(s)
    s.add_argument("--target", required=True)
    s.add_argument("--delta", type=int, default=50)
    s.add_argument("--model")
    s.add_argument("--mode", choices=["cg", "dense", "schur"], default="schur")
    s.add_argument("--weights", action="store_true")
    s.add_argument("--graph", action="store_true", help="random-walk influence instead of MF")
    s.add_argument("--alpha", type=float, default=0.3)
    s.add_argument("--resolvent", choices=["exact", "taylor"], default="exact")
    s.add_argument("--taylor-order", type=int, default=3)
    s.add_argument("--out")

    s = data_cmd("attack", cmd_attack, "generate fake users for a target")
    model_flags(s)
    s.add_argument("--target", required=True)
    s.add_argument("--variant", choices=attack.VARIANTS, default="S-TNA-Inf")
    s.add_argument("--m", type=int)
    s.add_argument("--size", type=float, default=0.03)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--delta", type=int, default=50)
    s.add_argument("--eta", type=float, default=0.01)
    s.add_argument("--b", type=float, default=1.0)
    s.add_argument("--N", type=int, default=10)
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--knowledge", type=float, default=1.0)
    s.add_argument("--recommender", choices=["mf", "graph"], default="mf")
    s.add_argument("--alpha", type=float, default=0.3)
    s.add_argument("--prefix", default="fake")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")

    s = data_cmd("inject", cmd_inject, "append fake-user profiles to a dataset")
    s.add_argument("profiles")
    s.add_argument("--out", required=True)

    s = data_cmd("detect", cmd_detect, "train/apply the fake-user detector")
    s.add_argument("--fake-prefix", default="fake")
    s.add_argument("--train", help="labeled dataset to train on (default: the data itself)")
    s.add_argument("--detector", help="existing detector checkpoint")
    s.add_argument("--save-detector")
    s.add_argument("--features", help="write the feature dump here")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the filtered dataset here")

    s = data_cmd("evaluate", cmd_evaluate, "hit ratio of a target")
    model_flags(s)
    s.add_argument("--target", required=True)
    s.add_argument("--N", type=int, default=10)
    s.add_argument("--model")
    s.add_argument("--recommender", choices=["mf", "graph"], default="mf")
    s.add_argument("--alpha", type=float, default=0.3)
    s.add_argument("--fake-prefix", default="fake")

    s = sub.add_parser("experiment", help="run an experiment grid")
    s.set_defaults(fn=cmd_experiment)
    s.add_argument("--config", help="JSON config (see README)")
    s.add_argument("--out", required=True)
    s.add_argument("--seeds")
    s.add_argument("--variants")
    s.add_argument("--knowledge")
    s.add_argument("--size", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--delta", type=int)
    s.add_argument("--b", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--N", type=int)
    s.add_argument("--recommender", choices=["mf", "graph"])
    s.add_argument("--detection", action="store_true")
    s.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ratings.DatasetError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
