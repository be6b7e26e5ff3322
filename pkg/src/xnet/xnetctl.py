"""Command-line pipeline orchestrator.

One subcommand per stage (train, dataset, surrogate, explain, tune, eval)
plus `pipeline` to run them all in order. Every stage reads the same
config, derives its randomness from the global seed, validates its
upstream artifacts by schema version and topology hash, and writes
machine-readable outputs plus a short human summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FilePath

import numpy as np

from . import SCHEMA_VERSION
from . import datakit, evalkit, flowsim, netcore, qrouter, surrogate, tuner, xaikit
from .config import RunConfig, load_config
from .errors import ConfigError, StageInputError, ValidationError, XnetError
from .qrouter import RewardWeights
from .util import derive_seed, write_text_atomic

STAGES = ("train", "dataset", "surrogate", "explain", "tune", "eval")


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _write_manifest(stage_dir: FilePath, stage: str, topology_hash: str,
                    seed: int, extra: dict | None = None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "stage": stage,
           "topology_hash": topology_hash, "seed": seed}
    if extra:
        doc.update(extra)
    write_text_atomic(stage_dir / "manifest.json",
                      json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _read_manifest(out_dir: FilePath, stage: str, topology_hash: str) -> dict:
    path = out_dir / stage / "manifest.json"
    if not path.is_file():
        raise StageInputError(
            f"stage '{stage}' output missing ({path}); run `xnetctl {stage}` first"
        )
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(
            f"{path}: schema_version {doc.get('schema_version')!r} != {SCHEMA_VERSION}"
        )
    if doc.get("topology_hash") != topology_hash:
        raise ValidationError(
            f"{path}: topology hash mismatch; upstream artifacts were built "
            "for a different topology"
        )
    return doc


def _tag_file(tag: str) -> str:
    return tag.replace(":", "-")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_train(cfg: RunConfig, out_dir: FilePath) -> None:
    t = cfg.topology.resolve()
    tms = cfg.traffic.resolve(t, cfg.seed)
    stage_seed = derive_seed(cfg.seed, "train")
    h = cfg.agent.hyperparams(stage_seed)
    w = cfg.agent.reward_weights()
    records = tuner.simulate_interval_chain(
        t, tms, w, h, warm_start=cfg.agent.warm_start, keep_tables=True
    )
    stage = out_dir / "train"
    (stage / "tms").mkdir(parents=True, exist_ok=True)
    netcore.write_topology(t, stage / "topology.csv")
    n_fallback = 0
    for tm, rec in zip(tms, records):
        netcore.write_tm(t, tm, stage / "tms")
        base = _tag_file(rec.tag)
        flowsim.write_metrics(rec.input_state, stage / f"input_state_{base}.csv")
        flowsim.write_metrics(rec.measured, stage / f"measured_{base}.csv")
        qrouter.write_qtables(rec.qtables, stage / f"qtables_{base}.csv")
        n_fallback += len(rec.fallback_pairs)
    _write_manifest(stage, "train", t.content_hash(), stage_seed, {
        "tm_tags": [rec.tag for rec in records],
        "weights": list(w.as_tuple()),
        "agent": {"alpha": h.alpha, "gamma": h.gamma, "epsilon": h.epsilon,
                  "episodes_per_pair": h.episodes_per_pair,
                  "hop_cost": h.hop_cost, "warm_start": cfg.agent.warm_start},
        "n_extraction_fallbacks": n_fallback,
    })
    print(f"train: {len(records)} intervals, {len(t.nodes)} nodes, "
          f"{n_fallback} extraction fallbacks -> {stage}")


def cmd_dataset(cfg: RunConfig, out_dir: FilePath) -> None:
    t = cfg.topology.resolve()
    topo_hash = t.content_hash()
    train_manifest = _read_manifest(out_dir, "train", topo_hash)
    train_dir = out_dir / "train"
    raw: list[datakit.RawSample] = []
    for tag in train_manifest["tm_tags"]:
        base = _tag_file(tag)
        state = flowsim.read_metrics(train_dir / f"input_state_{base}.csv", t)
        qt = qrouter.read_qtables(train_dir / f"qtables_{base}.csv")
        raw.extend(datakit.extract_samples(qt, flowsim.normalize_metrics(state)))
    ds = datakit.preprocess(raw, provenance={
        "tm_tags": train_manifest["tm_tags"],
        "agent": train_manifest["agent"],
        "weights": train_manifest["weights"],
        "train_seed": train_manifest["seed"],
        "topology_hash": topo_hash,
    })
    stage = out_dir / "dataset"
    stage.mkdir(parents=True, exist_ok=True)
    datakit.write_csv(ds, stage / "dataset.csv")
    _write_manifest(stage, "dataset", topo_hash, derive_seed(cfg.seed, "dataset"), {
        "n_rows": len(ds), "n_raw": len(raw),
    })
    print(f"dataset: {len(raw)} raw samples -> {len(ds)} rows -> {stage / 'dataset.csv'}")


_MODEL_KINDS = ("linear", "ridge", "forest", "boosted")


def _fit_all(cfg: RunConfig, train_X, train_y, seed: int) -> dict[str, surrogate.Model]:
    sc = cfg.surrogate
    return {
        "linear": surrogate.fit_linear(train_X, train_y),
        "ridge": surrogate.fit_ridge(train_X, train_y, lam=sc.ridge_lam),
        "forest": surrogate.fit_forest(
            train_X, train_y, n_trees=sc.forest.n_trees, max_depth=sc.forest.max_depth,
            min_leaf=sc.forest.min_leaf, feature_frac=sc.forest.feature_frac,
            seed=derive_seed(seed, "forest")),
        "boosted": surrogate.fit_gbt(
            train_X, train_y, n_rounds=sc.gbt.n_rounds, eta=sc.gbt.eta,
            max_depth=sc.gbt.max_depth, lam=sc.gbt.lam, min_leaf=sc.gbt.min_leaf),
    }


def cmd_surrogate(cfg: RunConfig, out_dir: FilePath) -> None:
    t = cfg.topology.resolve()
    topo_hash = t.content_hash()
    _read_manifest(out_dir, "dataset", topo_hash)
    ds = datakit.read_csv(out_dir / "dataset" / "dataset.csv")
    stage_seed = derive_seed(cfg.seed, "surrogate")
    train_ds, test_ds = datakit.split(ds, cfg.surrogate.test_frac,
                                      seed=derive_seed(stage_seed, "split"))
    models = _fit_all(cfg, train_ds.X, train_ds.y, stage_seed)
    stage = out_dir / "surrogate"
    stage.mkdir(parents=True, exist_ok=True)
    fid: dict[str, surrogate.Fidelity] = {}
    for kind in _MODEL_KINDS:
        fid[kind] = surrogate.fidelity(models[kind], test_ds.X, test_ds.y)
        surrogate.save_model(models[kind], stage / f"model_{kind}.json",
                             feature_names=list(datakit.FEATURE_NAMES),
                             metadata={"kind": kind, "seed": stage_seed})
    ordered = [(models[kind], fid[kind]) for kind in _MODEL_KINDS]
    best = surrogate.select_best(ordered)
    selected = next(kind for kind in _MODEL_KINDS if models[kind] is best)
    write_text_atomic(stage / "fidelity.json", json.dumps({
        "schema_version": SCHEMA_VERSION,
        "models": {kind: {"r2": fid[kind].r2, "mse": fid[kind].mse,
                          "n_test": fid[kind].n_test} for kind in _MODEL_KINDS},
        "selected": selected,
        "split": {"test_frac": cfg.surrogate.test_frac, "n_train": len(train_ds),
                  "n_test": len(test_ds)},
    }, sort_keys=True, indent=1) + "\n")
    _write_manifest(stage, "surrogate", topo_hash, stage_seed, {"selected": selected})
    summary = ", ".join(f"{k}: r2={fid[k].r2:.4f} mse={fid[k].mse:.4f}"
                        for k in _MODEL_KINDS)
    print(f"surrogate: {summary}; selected={selected}")


def cmd_explain(cfg: RunConfig, out_dir: FilePath) -> None:
    t = cfg.topology.resolve()
    topo_hash = t.content_hash()
    sur_manifest = _read_manifest(out_dir, "surrogate", topo_hash)
    _read_manifest(out_dir, "dataset", topo_hash)
    ds = datakit.read_csv(out_dir / "dataset" / "dataset.csv")
    model = surrogate.load_model(out_dir / "surrogate" / f"model_{sur_manifest['selected']}.json")
    stage_seed = derive_seed(cfg.seed, "explain")
    ec = cfg.explain
    rng = np.random.default_rng(derive_seed(stage_seed, "background"))
    n = len(ds)
    bg_idx = np.sort(rng.choice(n, size=min(ec.background_rows, n), replace=False))
    background = ds.X[bg_idx]
    shap_idx = xaikit.sample_rows(n, ec.shap_rows, derive_seed(stage_seed, "rows"))
    phi, base = xaikit.shap_many(model, ds.X[shap_idx], background)
    ranking = xaikit.ranking_from_phi(phi, datakit.FEATURE_NAMES)
    stage = out_dir / "explain"
    stage.mkdir(parents=True, exist_ok=True)
    row_ids = [int(i) for i in shap_idx]
    write_text_atomic(stage / "shap.csv",
                      xaikit.shap_csv_text(phi, datakit.FEATURE_NAMES, row_ids))
    pdp_curves = []
    ice_idx = xaikit.sample_rows(n, ec.ice_rows, derive_seed(stage_seed, "ice"))
    for f, name in enumerate(datakit.FEATURE_NAMES):
        points = np.column_stack([ds.X[shap_idx, f], phi[:, f]])
        write_text_atomic(stage / f"shap_dependence_{name}.csv",
                          xaikit.dependence_csv_text(points, row_ids))
        curve = xaikit.pdp(model, ds.X, f, ec.grid_size)
        pdp_curves.append((name, curve))
        ice_curves = xaikit.ice(model, ds.X[ice_idx], f, ec.grid_size)
        write_text_atomic(stage / f"ice_{name}.csv",
                          xaikit.ice_csv_text(ice_curves, [int(i) for i in ice_idx]))
    write_text_atomic(stage / "pdp.csv", xaikit.pdp_csv_text(pdp_curves))
    write_text_atomic(stage / "ranking.json", json.dumps({
        "schema_version": SCHEMA_VERSION,
        "base_value": base,
        "n_rows": len(row_ids),
        "n_background": int(len(background)),
        "ranking": [{"feature": name, "mean_abs_shap": score}
                    for name, score in ranking.entries],
    }, sort_keys=True, indent=1) + "\n")
    _write_manifest(stage, "explain", topo_hash, stage_seed,
                    {"ranking": [name for name, _ in ranking.entries]})
    order = " > ".join(name for name, _ in ranking.entries)
    print(f"explain: ranked {order} over {len(row_ids)} rows -> {stage}")


def cmd_tune(cfg: RunConfig, out_dir: FilePath) -> None:
    t = cfg.topology.resolve()
    topo_hash = t.content_hash()
    tms = cfg.traffic.resolve(t, cfg.seed)
    candidates = tuner.weight_grid(cfg.tuner.step)
    if cfg.tuner.prune:
        explain_manifest = _read_manifest(out_dir, "explain", topo_hash)
        names = explain_manifest["ranking"]
        ranking = xaikit.FeatureRanking(
            entries=tuple((name, 0.0) for name in names))
        candidates = tuner.prune_by_ranking(candidates, ranking)
    h = cfg.agent.hyperparams(derive_seed(cfg.seed, "tune"))
    result = tuner.search(candidates, t, tms, h, top_k=cfg.tuner.top_k,
                          warm_start=cfg.agent.warm_start)
    stage = out_dir / "tune"
    stage.mkdir(parents=True, exist_ok=True)
    tuner.write_tune_result(result, stage / "tune_result.json")
    _write_manifest(stage, "tune", topo_hash, h.seed, {
        "n_candidates": len(result.candidates),
        "selected": [list(c.weights.as_tuple()) for c in result.selected],
    })
    top = result.ranking[0]
    print(f"tune: {len(result.candidates)} candidates; best weights "
          f"{tuple(round(v, 4) for v in top['weights'])} "
          f"(mean rank {top['mean_rank']:.2f}) -> {stage}")


def _eval_weight_list(cfg: RunConfig, out_dir: FilePath,
                      cli_weights: list[str] | None) -> list[RewardWeights]:
    if cli_weights:
        out = []
        for spec_str in cli_weights:
            parts = spec_str.split(",")
            if len(parts) != 3:
                raise ConfigError(f"--weights expects 'b,d,l', got {spec_str!r}")
            try:
                out.append(RewardWeights(*(float(p) for p in parts)))
            except (ValueError, ValidationError) as exc:
                raise ConfigError(f"bad --weights {spec_str!r}: {exc}") from exc
        return out
    tune_path = out_dir / "tune" / "tune_result.json"
    if tune_path.is_file():
        doc = json.loads(tune_path.read_text(encoding="utf-8"))
        return [RewardWeights(*w) for w in doc["selected"]]
    return [RewardWeights(*w) for w in cfg.eval.weights]


def cmd_eval(cfg: RunConfig, out_dir: FilePath,
             cli_weights: list[str] | None = None) -> None:
    t = cfg.topology.resolve()
    tms = cfg.traffic.resolve(t, cfg.seed)
    h = cfg.agent.hyperparams(derive_seed(cfg.seed, "eval"))
    baseline_w = RewardWeights.equal()
    extra = [w for w in _eval_weight_list(cfg, out_dir, cli_weights)
             if w.as_tuple() != baseline_w.as_tuple()]
    reports = [tuner.evaluate_weights(baseline_w, t, tms, h, label="baseline",
                                      warm_start=cfg.agent.warm_start)]
    for w in extra:
        reports.append(tuner.evaluate_weights(w, t, tms, h,
                                              warm_start=cfg.agent.warm_start))
    stage = out_dir / "eval"
    stage.mkdir(parents=True, exist_ok=True)
    evalkit.emit_report(reports, stage)
    comparisons = [evalkit.compare(reports[0], r) for r in reports[1:]]
    write_text_atomic(stage / "comparison.json", json.dumps({
        "schema_version": SCHEMA_VERSION, "baseline": reports[0].label,
        "comparisons": comparisons,
    }, sort_keys=True, indent=1) + "\n")
    _write_manifest(stage, "eval", t.content_hash(), h.seed,
                    {"labels": [r.label for r in reports]})
    for r in reports:
        print(f"eval {r.label}: stretch={r.overall('mean_stretch'):.4f} "
              f"delay={r.overall('mean_delay_ms'):.3f}ms "
              f"throughput={r.overall('mean_throughput_mbps'):.3f}Mbps "
              f"loss={r.overall('mean_loss'):.4f}")


def cmd_pipeline(cfg: RunConfig, out_dir: FilePath) -> None:
    cmd_train(cfg, out_dir)
    cmd_dataset(cfg, out_dir)
    cmd_surrogate(cfg, out_dir)
    cmd_explain(cfg, out_dir)
    cmd_tune(cfg, out_dir)
    cmd_eval(cfg, out_dir)
    print(f"pipeline: all stages complete -> {out_dir}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xnetctl",
        description="Simulate, train, explain and retune a Q-routing agent.",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config JSON and exit")
    sub = parser.add_subparsers(dest="command")
    for name in (*STAGES, "pipeline"):
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        p.add_argument("--warm-start", action="store_true",
                       help="seed each interval's tables from the previous interval")
        if name == "eval":
            p.add_argument("--weights", action="append", default=None,
                           metavar="B,D,L", help="weight triple to evaluate "
                           "(repeatable; default: tune selection or config)")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
    if args.warm_start:
        agent = cfg.agent.__class__(**{**cfg.agent.__dict__, "warm_start": True})
        cfg = RunConfig(**{**cfg.__dict__, "agent": agent})
    out_dir = FilePath(args.out if args.out is not None else cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.command == "pipeline":
        cmd_pipeline(cfg, out_dir)
    elif args.command == "train":
        cmd_train(cfg, out_dir)
    elif args.command == "dataset":
        cmd_dataset(cfg, out_dir)
    elif args.command == "surrogate":
        cmd_surrogate(cfg, out_dir)
    elif args.command == "explain":
        cmd_explain(cfg, out_dir)
    elif args.command == "tune":
        cmd_tune(cfg, out_dir)
    elif args.command == "eval":
        cmd_eval(cfg, out_dir, cli_weights=args.weights)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        sys.stdout.write(RunConfig().to_json())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        sys.stderr.write("config-error: no command given\n")
        return 1
    try:
        _dispatch(args)
    except ConfigError as exc:
        sys.stderr.write(f"config-error: {exc}\n")
        return 1
    except StageInputError as exc:
        sys.stderr.write(f"stage-input-missing: {exc}\n")
        return 1
    except ValidationError as exc:
        sys.stderr.write(f"validation-error: {exc}\n")
        return 1
    except XnetError as exc:
        sys.stderr.write(f"runtime-error: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f"runtime-error: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
