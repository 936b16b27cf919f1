"""Command-line entry point: ``enp-lab <subcommand> ...``.

Subcommands: gen-data, train, eval, oracle, ablate, export-plots. Every
subcommand accepts ``--config FILE`` (JSON); explicit flags override values
from the file. ``ENP_LAB_SEED`` supplies the seed when neither gives one.
Output locations are never overwritten unless ``--force`` is passed.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .env import SPLITS, EnvConfig, LayoutCache, SeedSplit, generate_dataset, read_dataset, write_dataset
from .metrics import bucket_labels
from .oracle import entropy, forward_kl, lift_policy, load_instance, occupancy, reverse_kl, describe_state
from .policy import PolicyModel
from .trainer import EVAL_KEYS, RunLog, TabularPolicy, TrainConfig, evaluate, train

log = logging.getLogger("enp_lab")

SEED_ENV = "ENP_LAB_SEED"
EVAL_COLUMNS = ("split", "method", "seed", "SR", "SPL", "NE", "TL", "OSR", "NDTW", "SDTW") + tuple(
    bucket_labels()
)
PLOT_COLUMNS = ("x", "y", "series", "seed")


@dataclass(frozen=True)
class DataConfig:
    """Dataset size of the reference desk-scale suite.

    Layout seeds are ``seed * 100000 + i``: the first ``train_layouts`` feed
    train and val_seen, the next ``unseen_layouts`` feed val_unseen.
    """

    train_layouts: int = 80
    unseen_layouts: int = 20
    episodes_per_layout: int = 10
    val_seen_per_layout: int = 1
    val_unseen_per_layout: int = 10
    seed: int = 0

    def split(self):
        base = self.seed * 100000
        n = self.train_layouts
        return SeedSplit(range(base, base + n), range(base + n, base + n + self.unseen_layouts))

    def generate(self, env_config):
        return generate_dataset(
            self.split(), self.episodes_per_layout, env_config,
            self.val_seen_per_layout, self.val_unseen_per_layout,
        )


class CliError(Exception):
    """A user-facing failure; reported without a traceback, exit code 2."""


# ---------------------------------------------------------------------------
# shared helpers


def _load_config_file(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return data


def _resolve_seed(flag_value, file_value=None):
    if flag_value is not None:
        return int(flag_value)
    if file_value is not None:
        return int(file_value)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _prepare_out(path, force, is_dir=True):
    """Create ``path`` for writing; refuse to clobber existing output without ``force``."""
    path = Path(path)
    if path.exists():
        if not force:
            raise CliError(f"{path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    if is_dir:
        path.mkdir(parents=True)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(_nan_to_none(obj), indent=1, sort_keys=True, allow_nan=False) + "\n")


def _flag_overrides(args, names):
    """Flags the user actually set (argparse default is None), keyed by field name."""
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _load_dataset(directory):
    directory = Path(directory)
    if not (directory / "meta.json").exists():
        raise CliError(f"no dataset at {directory} (missing meta.json)")
    return read_dataset(directory)


def _env_fields():
    return [f for f in fields(EnvConfig)]


def _train_fields():
    return [f for f in fields(TrainConfig)]


def _add_field_flags(parser, dataclass_fields, skip=()):
    for f in dataclass_fields:
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            parser.add_argument(flag, dest=f.name, type=_parse_bool, default=None, metavar="BOOL")
        elif isinstance(default, tuple):
            parser.add_argument(flag, dest=f.name, nargs="*", default=None)
        elif default is None or isinstance(default, float):
            parser.add_argument(flag, dest=f.name, type=_parse_optional_float, default=None)
        elif isinstance(default, int):
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None)


def _parse_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text):
    if text.lower() in ("none", "null", "off"):
        return None
    return float(text)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args):
    file_cfg = _load_config_file(args.config)
    env_keys = {f.name for f in _env_fields()}
    data_keys = {f.name for f in fields(DataConfig)}
    unknown = set(file_cfg) - env_keys - data_keys
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    try:
        env_cfg = EnvConfig.from_dict(
            {**{k: v for k, v in file_cfg.items() if k in env_keys}, **_flag_overrides(args, env_keys)}
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid environment config: {exc}") from exc
    data_args = {k: v for k, v in file_cfg.items() if k in data_keys and k != "seed"}
    data_args.update(_flag_overrides(args, data_keys - {"seed"}))
    data_cfg = DataConfig(seed=_resolve_seed(args.seed, file_cfg.get("seed")), **data_args)
    if min(data_cfg.train_layouts, data_cfg.unseen_layouts, data_cfg.episodes_per_layout) < 1:
        raise CliError("layout and episode counts must be >= 1")
    out = _prepare_out(args.out, args.force)
    data = data_cfg.generate(env_cfg)
    split = data_cfg.split()
    meta = {
        "data_config": {f.name: getattr(data_cfg, f.name) for f in fields(DataConfig)},
        "train_layout_seeds": list(split.train),
        "unseen_layout_seeds": list(split.unseen),
    }
    write_dataset(out, data, env_cfg, meta)
    print(" ".join(f"{k}={len(data[k])}" for k in SPLITS))
    return 0


# ---------------------------------------------------------------------------
# train


def train_config_from(args, file_cfg):
    keys = {f.name for f in _train_fields()}
    unknown = set(file_cfg) - keys
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    merged = {**file_cfg, **_flag_overrides(args, keys - {"seed"})}
    merged["seed"] = _resolve_seed(args.seed, file_cfg.get("seed"))
    try:
        config = TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid training config: {exc}") from exc
    return config


def cmd_train(args):
    config = train_config_from(args, _load_config_file(args.config))
    instance = None
    if args.instance:
        try:
            instance = load_instance(args.instance)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError(f"cannot load instance {args.instance}: {exc}") from exc
    if config.method == "airl-tab" and instance is None:
        raise CliError("--method airl-tab needs --instance")
    if args.instance_demos:
        if instance is None:
            raise CliError("--instance-demos needs --instance")
        data, env_cfg = {"train": instance.demonstrations()}, instance.env_config
        if args.dataset_dir:
            raise CliError("--instance-demos replaces the dataset; drop --dataset-dir")
    elif args.dataset_dir:
        data, env_cfg, _ = _load_dataset(args.dataset_dir)
    else:
        raise CliError("--dataset-dir is required (or --instance with --instance-demos)")
    out = _prepare_out(args.out, args.force)
    started = time.time()

    def progress(rec):
        log.info("epoch %d loss_pi=%.4f loss_s=%.4f", rec["epoch"], rec["loss_pi"], rec["loss_s"])

    model, run = train(config, data, env_cfg, instance=instance, progress=progress)
    run.write(out / "runlog.jsonl")
    meta = {"config": config.to_dict(), "env_config": env_cfg.to_dict(), "dataset_dir": str(args.dataset_dir),
            "seconds": round(time.time() - started, 3)}
    model.save(out / "checkpoint.json", {"train_config": config.to_dict(), "env_config": env_cfg.to_dict()})
    _write_json(out / "run.json", meta)
    print(f"wrote {out} ({len(run)} epochs, {meta['seconds']} s)")
    return 0


# ---------------------------------------------------------------------------
# eval


def _load_policy(path, env_cfg=None):
    try:
        model, header = PolicyModel.load(path)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}") from exc
    if env_cfg is not None:
        want = (env_cfg.instruction_vocab_size, env_cfg.obs_dim)
        got = (model.dims.vocab_size, model.dims.obs_dim)
        if want != got:
            raise CliError(
                f"checkpoint {path} expects (vocab, obs_dim)={got} but the environment gives {want}"
            )
    return model, header


def eval_rows(model, data, env_cfg, splits, method, seed, max_steps=40, radius=0, threshold=3.0):
    layouts = LayoutCache(env_cfg)
    rows = []
    for split in splits:
        if not data.get(split):
            raise CliError(f"split {split!r} is empty")
        summary = evaluate(model, data[split], layouts, env_cfg, max_steps, radius, threshold)
        row = {"split": split, "method": method, "seed": seed}
        row.update({k: summary[k] for k in EVAL_COLUMNS[3:]})
        rows.append(row)
    return rows


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _csv_value(r.get(k)) for k in columns})


def _csv_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else v


def cmd_eval(args):
    data, env_cfg, _ = _load_dataset(args.dataset_dir)
    model, header = _load_policy(args.checkpoint, env_cfg)
    tcfg = header.get("train_config", {})
    method = args.method or tcfg.get("method", "unknown")
    seed = args.seed if args.seed is not None else tcfg.get("seed", _resolve_seed(None))
    out = _prepare_out(args.out, args.force, is_dir=False)
    rows = eval_rows(model, data, env_cfg, args.splits, method, seed, args.max_steps,
                     args.success_radius, args.ndtw_threshold)
    write_csv(out, EVAL_COLUMNS, rows)
    for r in rows:
        print(f"{r['split']}: SR={r['SR']:.3f} SPL={r['SPL']:.3f} NE={r['NE']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# oracle


def _occupancy_records(table, instance):
    out = []
    for s, a in zip(*np.nonzero(table.values)):
        out.append({**describe_state(instance, int(s)), "action": int(a), "value": float(table.values[s, a])})
    return out


def cmd_oracle(args):
    try:
        instance = load_instance(args.instance)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load instance {args.instance}: {exc}") from exc
    params_header = json.loads(Path(args.checkpoint).read_text()).get("header", {})
    if params_header.get("model") == "enp_lab.TabularPolicy":
        from .autodiff import load_parameters

        params, _ = load_parameters(args.checkpoint)
        if params["logits"].shape != (instance.mdp.n_states, instance.mdp.n_actions):
            raise CliError("tabular checkpoint does not match the instance's state count")
        policy = TabularPolicy(params["logits"]).policy()
    else:
        model, _ = _load_policy(args.checkpoint, instance.env_config)
        policy = lift_policy(model, instance)
    out = _prepare_out(args.out, args.force, is_dir=False)
    expert = instance.expert_occupancy()
    learner = occupancy(instance.mdp, policy)
    smoothing = args.smoothing
    rev = reverse_kl(learner, expert, smoothing)
    result = {
        "forward_kl": forward_kl(expert, learner, smoothing),
        "reverse_kl": rev.kl,
        "reverse_kl_cross_entropy": rev.cross_entropy,
        "learner_entropy": entropy(learner),
        "expert_entropy": entropy(expert),
        "success_probability": instance.success_probability(policy),
        "n_states": instance.mdp.n_states,
        "horizon": instance.mdp.horizon,
        "smoothing": smoothing,
        "expert_occupancy": _occupancy_records(expert, instance),
        "learner_occupancy": _occupancy_records(learner, instance),
    }
    _write_json(out, result)
    print(f"forward_kl={result['forward_kl']:.6f} reverse_kl={result['reverse_kl']:.6f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


@dataclass
class ExperimentSpec:
    """A grid of training runs: ``axes`` (field -> values) crossed with ``seeds``."""

    name: str
    env_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    sgld_config: dict = field(default_factory=dict)
    data_config: dict = field(default_factory=dict)
    eval_splits: list = field(default_factory=lambda: ["val_unseen"])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    axes: dict = field(default_factory=dict)

    SGLD_KEYS = {
        "step_size": "sgld_eps", "noise_var": "sgld_noise_var", "iterations": "sgld_iters",
        "matched_kernel": "sgld_matched_kernel", "state_bound": "sgld_state_bound",
        "capacity": "memory_capacity", "reinit_prob": "memory_reinit_prob",
    }
    AXIS_ALIASES = {"eps": "sgld_eps", "epsilon": "sgld_eps", "noise_var": "sgld_noise_var",
                    "iters": "sgld_iters", "lambda": "lambda_s"}

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        train_keys = {f.name for f in _train_fields()}
        env_keys = {f.name for f in _env_fields()}
        bad = set(self.train_config) - train_keys
        bad |= {k for k in self.sgld_config if k not in self.SGLD_KEYS and k not in train_keys}
        bad |= set(self.env_config) - env_keys
        bad |= set(self.data_config) - {f.name for f in fields(DataConfig)}
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        axes = {}
        for key, values in self.axes.items():
            name = self.AXIS_ALIASES.get(key, self.SGLD_KEYS.get(key, key))
            if name not in train_keys or name == "seed":
                raise ValueError(f"ablation axis {key!r} is not a training config field")
            if not isinstance(values, list) or not values:
                raise ValueError(f"ablation axis {key!r} needs a non-empty value list")
            axes[name] = values
        self.axes = axes

    @classmethod
    def from_file(cls, path):
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**raw)

    def base_train_dict(self):
        base = dict(self.train_config)
        for k, v in self.sgld_config.items():
            base[self.SGLD_KEYS.get(k, k)] = v
        base["eval_splits"] = list(self.eval_splits)
        return base

    def cells(self):
        names = list(self.axes)
        for combo in itertools.product(*(self.axes[n] for n in names)):
            yield dict(zip(names, combo))


def cell_label(cell):
    if not cell:
        return "base"
    return ",".join(f"{k}={v}" for k, v in cell.items())


def _run_cell(job):
    """Worker body for one (cell, seed) run; returns a result dict, never raises."""
    spec_dict, cell, seed, out_dir, dataset_dir = job
    started = time.time()
    try:
        spec = ExperimentSpec(**spec_dict)
        data, env_cfg, _ = _cached_dataset(spec, dataset_dir)
        cfg = TrainConfig.from_dict({**spec.base_train_dict(), **cell, "seed": seed})
        model, run = train(cfg, data, env_cfg)
        run_dir = Path(out_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        run.write(run_dir / "runlog.jsonl")
        _write_json(run_dir / "run.json", {"config": cfg.to_dict(), "cell": cell, "seed": seed})
        final = run.records[-1] if run.records else {}
        metrics = {s: final.get(s, {}) for s in spec.eval_splits}
        return {"cell": cell, "seed": seed, "ok": True, "metrics": metrics,
                "seconds": round(time.time() - started, 3), "dir": str(run_dir)}
    except Exception as exc:  # recorded in the summary, grid continues
        return {"cell": cell, "seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "seconds": round(time.time() - started, 3), "dir": str(out_dir)}


_DATASETS = {}


def _cached_dataset(spec, dataset_dir):
    if dataset_dir:
        key = ("dir", str(dataset_dir))
        if key not in _DATASETS:
            _DATASETS[key] = read_dataset(dataset_dir)
        return _DATASETS[key]
    env_cfg = EnvConfig.from_dict(spec.env_config)
    data_cfg = DataConfig(**spec.data_config)
    key = ("gen", json.dumps(env_cfg.to_dict(), sort_keys=True), data_cfg)
    if key not in _DATASETS:
        _DATASETS[key] = (data_cfg.generate(env_cfg), env_cfg, {})
    return _DATASETS[key]


def summarize(results, splits, metrics=("SR", "SPL", "NE", "NDTW")):
    """One row per cell: mean and std over successful seeds of each split metric."""
    groups = {}
    for r in results:
        groups.setdefault(json.dumps(r["cell"], sort_keys=True), []).append(r)
    rows = []
    for key, runs in groups.items():
        cell = json.loads(key)
        ok = [r for r in runs if r["ok"]]
        row = {"cell": cell_label(cell), **{k: v for k, v in cell.items()},
               "runs": len(runs), "failed": len(runs) - len(ok)}
        for split in splits:
            for m in metrics:
                vals = [r["metrics"][split][m] for r in ok if m in r["metrics"].get(split, {})]
                row[f"{split}_{m}_mean"] = float(np.mean(vals)) if vals else float("nan")
                row[f"{split}_{m}_std"] = float(np.std(vals)) if vals else float("nan")
        rows.append(row)
    return rows


def run_ablation(spec, out, jobs=1, dataset_dir=None):
    spec_dict = {f.name: getattr(spec, f.name) for f in fields(ExperimentSpec)}
    work = []
    for cell in spec.cells():
        for seed in spec.seeds:
            run_dir = Path(out) / "runs" / _safe_name(cell_label(cell)) / f"seed_{seed}"
            work.append((spec_dict, cell, seed, str(run_dir), dataset_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, work))
    else:
        results = []
        for job in work:
            results.append(_run_cell(job))
            r = results[-1]
            log.info("%s seed %s: %s", cell_label(r["cell"]), r["seed"], "ok" if r["ok"] else r["error"])
    rows = summarize(results, spec.eval_splits)
    return results, rows


def _safe_name(label):
    return "".join(c if c.isalnum() or c in "=.,-_" else "_" for c in label)


def cmd_ablate(args):
    try:
        spec = ExperimentSpec.from_file(args.spec)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CliError(f"invalid experiment spec {args.spec}: {exc}") from exc
    if args.seeds:
        spec.seeds = list(args.seeds)
    out = _prepare_out(args.out, args.force)
    results, rows = run_ablation(spec, out, args.jobs, args.dataset_dir)
    (out / "results.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in results))
    columns = list(rows[0]) if rows else ["cell"]
    write_csv(out / "summary.csv", columns, rows)
    _write_json(out / "summary.json", {"name": spec.name, "axes": spec.axes, "seeds": spec.seeds,
                                       "rows": _nan_to_none(rows)})
    for r in rows:
        split = spec.eval_splits[0]
        print(f"{r['cell']}: SR {r[f'{split}_SR_mean']:.3f} ± {r[f'{split}_SR_std']:.3f} "
              f"({r['runs'] - r['failed']}/{r['runs']} ok)")
    failed = sum(not r["ok"] for r in results)
    if failed:
        print(f"{failed} run(s) failed; see {out / 'results.jsonl'}", file=sys.stderr)
        return 1
    return 0


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# export-plots


def _find_runs(paths):
    runs = []
    for p in paths:
        p = Path(p)
        if (p / "runlog.jsonl").exists():
            runs.append(p)
        else:
            runs.extend(sorted(q.parent for q in p.rglob("runlog.jsonl")))
    return runs


def plot_rows(run_dir):
    """Tidy rows for one run: loss, KL and metric curves plus final SR-by-length."""
    run_dir = Path(run_dir)
    records = RunLog.read(run_dir / "runlog.jsonl").records
    info_path = run_dir / "run.json"
    cfg = json.loads(info_path.read_text()).get("config", {}) if info_path.exists() else {}
    label = cfg.get("method", run_dir.name)
    seed = cfg.get("seed", "")
    curves, kl, lengths = [], [], []
    for rec in records:
        x = rec["epoch"]
        for key in ("loss_pi", "loss_s"):
            curves.append({"x": x, "y": rec[key], "series": f"{label}/{key}", "seed": seed})
        for split, vals in rec.items():
            if isinstance(vals, dict):
                for m in EVAL_KEYS:
                    if m in vals:
                        curves.append({"x": x, "y": vals[m], "series": f"{label}/{split}/{m}", "seed": seed})
        for key in ("forward_kl", "tabular_SR"):
            if key in rec:
                kl.append({"x": x, "y": rec[key], "series": f"{label}/{key}", "seed": seed})
    final = next((r for r in reversed(records) if any(isinstance(v, dict) for v in r.values())), None)
    if final is not None:
        for split, vals in final.items():
            if isinstance(vals, dict):
                for b in bucket_labels():
                    if b in vals:
                        y = vals[b]
                        lengths.append({"x": b, "y": "nan" if y is None else y,
                                        "series": f"{label}/{split}", "seed": seed})
    return curves, kl, lengths


def cmd_export_plots(args):
    runs = _find_runs(args.runs)
    if not runs:
        raise CliError("no runlog.jsonl found under the given paths")
    out = _prepare_out(args.out, args.force)
    tables = ([], [], [])
    for r in runs:
        for acc, rows in zip(tables, plot_rows(r)):
            acc.extend(rows)
    for name, rows in zip(("curves.csv", "kl_curves.csv", "sr_by_length.csv"), tables):
        write_csv(out / name, PLOT_COLUMNS, rows)
    print(f"exported {len(runs)} run(s) to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="enp-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON file of defaults; flags override it")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--force", action="store_true", help="overwrite existing output")
        p.add_argument("--seed", type=int, default=None, help=f"seed (fallback: ${SEED_ENV}, then 0)")

    p = sub.add_parser("gen-data", help="generate train/val_seen/val_unseen demonstrations")
    common(p, "output directory")
    for f in fields(DataConfig):
        if f.name != "seed":
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=int, default=None)
    _add_field_flags(p, _env_fields())
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy (bc, dagger, enp, airl-tab)")
    common(p, "run directory (runlog.jsonl, checkpoint.json, run.json)")
    p.add_argument("--dataset-dir", help="dataset written by gen-data")
    p.add_argument("--instance", help="tabular instance JSON; adds forward-KL tracking")
    p.add_argument("--instance-demos", action="store_true",
                   help="train on the instance's expert demonstrations instead of a dataset")
    _add_field_flags(p, _train_fields(), skip=("seed",))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy rollouts of a checkpoint; writes a metrics CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--splits", nargs="+", default=["val_seen", "val_unseen"], choices=SPLITS)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--force", action="store_true")
    p.add_argument("--method", help="label for the method column (default: from checkpoint)")
    p.add_argument("--seed", type=int, default=None, help="label for the seed column")
    p.add_argument("--max-steps", type=int, default=40)
    p.add_argument("--success-radius", type=int, default=0)
    p.add_argument("--ndtw-threshold", type=float, default=3.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="exact occupancy KLs of a checkpoint on a tabular instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="JSON path")
    p.add_argument("--force", action="store_true")
    p.add_argument("--smoothing", type=float, default=1e-8)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("ablate", help="run an ExperimentSpec grid and summarize mean ± std")
    p.add_argument("spec", help="ExperimentSpec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--dataset-dir", help="use this dataset instead of generating one")
    p.add_argument("--seeds", type=int, nargs="+", help="override the spec's seed list")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-plots", help="tidy CSVs (x, y, series, seed) from run directories")
    p.add_argument("runs", nargs="+", help="run directories or parents to search")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"enp-lab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
