"""Command-line entry point: ``panda {train,grid,synth,centrality,diagnose,convert-tu}``.

Every command that takes model or training flags also accepts
``--config FILE``, a JSON object whose keys are the long flag names (dashes
or underscores). Values from the file become defaults; flags given on the
command line win. Output files are written with deterministic content, so
rerunning a command with the same flags reproduces them byte for byte
(``--timing`` adds wall-clock fields and gives that up on purpose).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .centrality import CentralityKind, build_mask, compute_centrality
from .errors import PandaError, UsageError
from .graph import load_dataset, shift_matrix, split_indices, write_split_manifest
from .model import BACKBONES, ModelSpec, _columns, encode, init_params, load_checkpoint, make_probe, sample_mask, save_checkpoint
from .synth import FAMILIES, LabelRule, synth_generate
from .training import DataSplit, SearchSpace, TrainConfig, confidence_interval, grid_search, train_one
from .tudata import tu_to_jsonl

__all__ = ["main", "build_parser"]

DIAGNOSTICS = ("resistance", "dirichlet", "sensitivity", "signal", "bound")


# --------------------------------------------------------------------------
# argument plumbing


def _csv_ints(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _csv_strs(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--backbone", choices=BACKBONES, default="panda-gcn")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--p", type=int, default=64, help="hidden width of ordinary nodes")
    p.add_argument("--p-high", type=int, default=128, help="hidden width of expanded nodes")
    p.add_argument("--k", type=int, default=3, help="number of expanded nodes per graph")
    p.add_argument("--centrality", choices=[c.value for c in CentralityKind], default="betweenness")


def _add_train_flags(p: argparse.ArgumentParser):
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--batch", type=int, default=d.batch, help="graphs per optimizer step")
    p.add_argument("--trials", type=int, default=d.trials)
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panda", description="PANDA graph classification and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="repeated training trials with a confidence interval")
    train.add_argument("--config")
    train.add_argument("--dataset", required=True)
    _add_model_flags(train)
    _add_train_flags(train)
    train.add_argument("--out", required=True, help="results JSONL")
    train.add_argument("--save-checkpoint", help="write the first trial's kept parameters here")
    train.add_argument("--timing", action="store_true", help="record wall-clock seconds per trial")

    grid = sub.add_parser("grid", help="validation-only sweep over p_high, k and centrality")
    grid.add_argument("--config")
    grid.add_argument("--dataset", required=True)
    _add_model_flags(grid)
    _add_train_flags(grid)
    space = SearchSpace()
    grid.add_argument("--p-high-values", type=_csv_ints, default=space.p_high)
    grid.add_argument("--k-values", type=_csv_ints, default=space.k)
    grid.add_argument("--centralities", type=_csv_strs, default=space.centrality)
    grid.add_argument("--out", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic long-range dataset")
    synth.add_argument("--config")
    synth.add_argument("--family", choices=FAMILIES, default="barbell")
    synth.add_argument("--num-graphs", type=int, default=200)
    synth.add_argument("--sizes", type=json.loads, default=None,
                       help='JSON object of size choices, e.g. \'{"clique": [3, 4], "bridge": [1, 2]}\'')
    synth.add_argument("--distance", default="diameter", help="source-target hops, or 'diameter'")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    cent = sub.add_parser("centrality", help="per-graph centrality values and top-k ids")
    cent.add_argument("--config")
    cent.add_argument("--dataset", required=True)
    cent.add_argument("--kind", choices=[c.value for c in CentralityKind], default="betweenness")
    cent.add_argument("--k", type=int, default=3)
    cent.add_argument("--out", required=True)

    diag = sub.add_parser("diagnose", help="over-squashing diagnostics")
    diag.add_argument("which", choices=DIAGNOSTICS)
    diag.add_argument("--config")
    diag.add_argument("--dataset", required=True)
    _add_model_flags(diag)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--checkpoint", help="use trained parameters instead of a random init")
    diag.add_argument("--max-graphs", type=int, default=None)
    diag.add_argument("--num-sources", type=int, default=10)
    diag.add_argument("--num-pairs", type=int, default=64)
    diag.add_argument("--norm", choices=("entrywise", "operator"), default=None,
                      help="Jacobian norm (default: entrywise, operator for 'bound')")
    diag.add_argument("--out", required=True, help="JSONL report")
    diag.add_argument("--csv", help="two-column CSV (default: --out with .csv suffix)")

    tu = sub.add_parser("convert-tu", help="convert a TU benchmark folder to JSONL")
    tu.add_argument("--directory", required=True)
    tu.add_argument("--name", required=True)
    tu.add_argument("--out", required=True)
    return parser


def _config_path(argv) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Config-file values become subcommand defaults; explicit flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if path and command in subparsers:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        sub = subparsers[command]
        actions = {a.dest: a for a in sub._actions}
        values = {}
        for key, value in config.items():
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("config", "help", "which"):
                raise UsageError(f"unknown config key {key!r} for '{command}'")
            action = actions[dest]
            # argparse only converts string defaults; lists are joined for csv-typed flags
            if isinstance(value, list):
                value = ",".join(map(str, value))
            if action.type is not None and isinstance(value, str):
                value = action.type(value)
            values[dest] = value
            action.required = False
        sub.set_defaults(**values)
    return parser.parse_args(argv)


def _model_spec(args, in_features: int, num_classes: int) -> ModelSpec:
    return ModelSpec(backbone=args.backbone, layers=args.layers, p=args.p, p_high=args.p_high, k=args.k,
                     centrality=args.centrality, dropout=getattr(args, "dropout", 0.5),
                     num_classes=num_classes, in_features=in_features)


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, dropout=args.dropout, layers=args.layers, p=args.p,
                       max_epochs=args.max_epochs, patience=args.patience, batch=args.batch,
                       trials=args.trials, seed=args.seed)


def _dataset_shape(samples) -> tuple[int, int]:
    if not samples:
        raise UsageError("dataset is empty")
    return samples[0].features.shape[1], max(s.label for s in samples) + 1


def _write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _manifest_path(dataset, seed: int) -> Path:
    return Path(f"{dataset}.seed{seed}.split")


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> None:
    samples = load_dataset(args.dataset)
    in_features, num_classes = _dataset_shape(samples)
    spec = _model_spec(args, in_features, num_classes)
    config = _train_config(args)
    if config.trials < 2:
        raise UsageError("need at least 2 trials for a confidence interval")
    cache: dict = {}
    rows = []
    for i in range(config.trials):
        seed = config.seed + i
        split = DataSplit.from_dataset(samples, seed)
        write_split_manifest(_manifest_path(args.dataset, seed), split.indices)
        result, params = train_one(config, spec, samples, seed, split=split, cache=cache,
                                   timing=args.timing, return_params=True)
        if i == 0 and args.save_checkpoint:
            save_checkpoint(args.save_checkpoint, replace(spec, dropout=config.dropout), params,
                            extra={"trial_seed": seed})
        rows.append({"record": "trial", **result.to_dict()})
        print(f"trial {i} seed {seed}: val {result.val_accuracy:.3f} test {result.test_accuracy:.3f}",
              file=sys.stderr)
    mean, half = confidence_interval([r["test_accuracy"] for r in rows])
    rows.append({
        "record": "summary",
        "mean_test_accuracy": mean,
        "ci95_half_width": half,
        "display": f"{mean:.3f} ± {half:.3f}",
        "trials": config.trials,
        "model": replace(spec, dropout=config.dropout).to_dict(),
        "config": asdict(config),
    })
    _write_jsonl(args.out, rows)
    print(rows[-1]["display"])


def cmd_grid(args) -> None:
    samples = load_dataset(args.dataset)
    in_features, num_classes = _dataset_shape(samples)
    search = SearchSpace(tuple(args.p_high_values), tuple(args.k_values),
                         tuple(CentralityKind.parse(c).value for c in args.centralities))
    if not args.backbone.startswith("panda"):
        raise UsageError("grid search only applies to panda backbones")
    spec = _model_spec(args, in_features, num_classes)
    config = _train_config(args)
    split = DataSplit.from_dataset(samples, config.seed)
    write_split_manifest(_manifest_path(args.dataset, config.seed), split.indices)
    result = grid_search(search, config, samples, spec, split=split)
    rows = [{"record": "point", **row} for row in result.rows]
    p_high, k, kind = result.best
    rows.append({"record": "best", "p_high": p_high, "k": k, "centrality": kind})
    _write_jsonl(args.out, rows)
    print(f"best p_high={p_high} k={k} centrality={kind}")


def cmd_synth(args) -> None:
    rule = LabelRule.parse(args.distance)
    samples = synth_generate(args.family, args.sizes, args.seed, rule, args.out, num_graphs=args.num_graphs)
    if len(samples) >= 10:
        write_split_manifest(_manifest_path(args.out, args.seed), split_indices(len(samples), args.seed))
    print(f"wrote {len(samples)} graphs to {args.out}")


def cmd_centrality(args) -> None:
    samples = load_dataset(args.dataset)
    rows = []
    for i, s in enumerate(samples):
        c = compute_centrality(s.graph, args.kind)
        mask = build_mask(c, min(args.k, s.graph.num_nodes))
        rows.append({"graph_id": i, "kind": c.kind.value, "values": c.values.tolist(),
                     "topk_ids": [int(v) for v in mask.expanded_ids]})
    _write_jsonl(args.out, rows)


def _padded_input(spec, params, sample, mask, width):
    """Encoded features placed in the padded layout a probe expects."""
    dual = encode(spec, params, sample.features, mask)
    h0 = np.zeros((sample.graph.num_nodes, width))
    h0[dual.low_ids] = dual.low.data @ _columns(dual.low.shape[1], width)
    if len(dual.high_ids):
        h0[dual.high_ids] = dual.high.data @ _columns(dual.high.shape[1], width)
    return h0


def cmd_diagnose(args) -> None:
    samples = load_dataset(args.dataset)
    if args.max_graphs is not None:
        samples = samples[: args.max_graphs]
    in_features, num_classes = _dataset_shape(samples)
    if args.checkpoint:
        spec, params = load_checkpoint(args.checkpoint)
        weights = "checkpoint"
    else:
        spec = _model_spec(args, in_features, num_classes)
        params = init_params(spec, args.seed)
        weights = "random-init"
    meta = {"record": "metadata", "diagnostic": args.which, "weights": weights, "model": spec.to_dict(),
            "seed": args.seed}
    csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
    cache: dict = {}
    masks = [sample_mask(s, spec, cache) for s in samples]
    rows = [meta]

    if args.which == "resistance":
        table = []
        for i, s in enumerate(samples):
            r = dg.total_effective_resistance(s.graph)
            rows.append({"graph_id": i, "num_nodes": s.graph.num_nodes, "r_tot": r if np.isfinite(r) else None})
            table.append((i, r))
        header = ("graph_id", "r_tot")

    elif args.which == "dirichlet":
        per_layer = {ell: [] for ell in range(spec.layers + 1)}
        for i, (s, m) in enumerate(zip(samples, masks)):
            for ell in range(spec.layers + 1):
                probe = make_probe(spec, params, s.graph, m, num_layers=ell)
                h = probe(_padded_input(spec, params, s, m, probe.in_width)).data
                e = dg.dirichlet_energy(s.graph, h)
                rows.append({"graph_id": i, "layer": ell, "energy": e})
                per_layer[ell].append(e)
        table = [(ell, float(np.mean(v))) for ell, v in per_layer.items()]
        header = ("layer", "mean_energy")

    elif args.which == "sensitivity":
        norm = args.norm or "entrywise"
        meta["norm"] = norm
        per_layer = {ell: [] for ell in range(1, spec.layers + 1)}
        for i, (s, m) in enumerate(zip(samples, masks)):
            for ell in per_layer:
                probe = make_probe(spec, params, s.graph, m, num_layers=ell)
                val = dg.empirical_sensitivity(probe, s.graph, ell, args.num_pairs, args.seed, norm)
                rows.append({"graph_id": i, "layer": ell, "sensitivity": val})
                per_layer[ell].append(val)
        table = [(ell, float(np.mean(v))) for ell, v in per_layer.items()]
        header = ("layer", "mean_sensitivity")

    elif args.which == "signal":
        records = []
        for i, (s, m) in enumerate(zip(samples, masks)):
            if not dg.is_connected(s.graph) or s.graph.num_nodes < 2:
                continue
            probe = make_probe(spec, params, s.graph, m, final=True)
            h, r = dg.signal_propagation(probe, s.graph, args.num_sources, args.seed)
            records.append(dg.SignalRecord(i, r, h))
        report = dg.build_signal_report(records)
        meta.update(pearson=report.correlation, spearman=report.spearman, num_sources=args.num_sources)
        rows += [{"graph_id": r.graph_id, "r_tot": r.r_tot, "normalized_r_tot": r.normalized_r_tot,
                  "h_odot": r.h_odot} for r in report.records]
        table = [(r.normalized_r_tot, r.h_odot) for r in report.records]
        header = ("normalized_r_tot", "h_odot")

    else:  # bound
        norm = args.norm or "operator"
        meta.update(norm=norm, shift="adjacency+I", z=1.0)
        w = dg.max_abs_weight(params)
        table = []
        for i, (s, m) in enumerate(zip(samples, masks)):
            S = shift_matrix(s.graph, "adjacency", self_loops=True)
            for ell in range(1, spec.layers + 1):
                probe = make_probe(spec, params, s.graph, m, num_layers=ell)
                bp = dg.SensitivityBoundParams(1.0, w, probe.in_width, ell)
                for v, u, emp in dg.sensitivity_pairs(probe, s.graph, ell, args.num_pairs, args.seed, norm):
                    b = dg.sensitivity_bound(bp, S, v, u)
                    rows.append({"graph_id": i, "layer": ell, "v": v, "u": u, "empirical": emp, "bound": b})
                    table.append((emp, b))
        header = ("empirical", "bound")

    _write_jsonl(args.out, rows)
    _write_csv(csv_path, header, table)


def cmd_convert_tu(args) -> None:
    n = tu_to_jsonl(args.directory, args.name, args.out)
    print(f"wrote {n} graphs to {args.out}")


COMMANDS = {
    "train": cmd_train,
    "grid": cmd_grid,
    "synth": cmd_synth,
    "centrality": cmd_centrality,
    "diagnose": cmd_diagnose,
    "convert-tu": cmd_convert_tu,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        COMMANDS[args.command](args)
    except (PandaError, ValueError, OSError) as exc:
        print(f"panda: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
