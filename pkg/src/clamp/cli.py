"""Command-line entry point: ``clamp <subcommand> [--config F] [--set k=v ...]``.

Exit status is 0 on success, 1 for invalid configuration or inputs, 2 for I/O
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .analysis import eigenspectrum, geometry_report, linear_probe, power_law_fit, write_spectrum_csv
from .datasets import make_blobs
from .geometry import ValidationError
from .randorg import RandOrgConfig, run_density_sweep, summarize_sweep
from .trainer import AugmentConfig, TrainConfig, augment_views, sweep, train

log = logging.getLogger("clamp")

DEFAULTS = {
    "run.seed": 0,
    "data.path": "",
    "train.b": 64,
    "train.m": 4,
    "train.r_s": 3.0,
    "train.epochs": 30,
    "train.warmup_steps": 10,
    "train.base_lr": 2.0,
    "train.momentum": 0.9,
    "train.weight_decay": 1e-6,
    "train.trust_coefficient": 1e-3,
    "train.optimizer": "lars",
    "train.hidden": [128],
    "train.repr_dim": 64,
    "train.head": [64, 32],
    "train.val_fraction": 0.01,
    "augment.noise_sigma": 1.0,
    "augment.dropout_p": 0.1,
    "augment.scale_range": [0.8, 1.2],
    "randorg.N": 64,
    "randorg.D": 3,
    "randorg.radii": [0.05, 0.1, 0.15, 0.2, 0.25],
    "randorg.n_seeds": 20,
    "randorg.kick_amplitude": 0.05,
    "randorg.reciprocal": True,
    "randorg.max_steps": 50_000,
    "analyze.augmentations": 20,
    "analyze.repeats": 3,
    "analyze.samples": 200,
    "analyze.rank_min": 0,
    "analyze.rank_max": 0,
    "probe.epochs": 500,
    "probe.lr": 0.5,
    "sweep.axis": "r_s",
    "sweep.values": [1.0, 3.0, 7.0],
    "blobs.classes": 10,
    "blobs.per_class": 200,
    "blobs.test_per_class": 100,
    "blobs.d": 32,
    "blobs.separation": 8.0,
    "blobs.sigma": 1.0,
    "blobs.center_seed": 0,
}

_LIST_KEYS = {k for k, v in DEFAULTS.items() if isinstance(v, list)}


def resolve_config(config_path=None, overrides=(), seed=None) -> dict:
    """Defaults <- config file <- ``--set`` overrides <- ``--seed``.

    A ``manifest.json`` from an earlier run is accepted as the config file, so
    a run can be repeated from its recorded settings.
    """
    cfg = dict(DEFAULTS)
    layers = []
    if config_path:
        if str(config_path).endswith(".json"):
            layers.append(_manifest_config(config_path))
        else:
            layers.append(io.read_config(config_path))
    layers.append(io.parse_overrides(overrides))
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ValidationError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value)
    if seed is not None:
        cfg["run.seed"] = int(seed)
    return cfg


def _manifest_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("config"), dict):
        raise ValidationError(f"{path}: manifest has no 'config' object")
    return doc["config"]


def _coerce(key, value):
    default = DEFAULTS[key]
    try:
        if key in _LIST_KEYS:
            items = value if isinstance(value, list) else [value]
            kind = type(default[0]) if default else float
            return [kind(v) for v in items]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError
            return value
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config key {key!r}: cannot interpret {value!r}") from None


def train_config(cfg: dict) -> TrainConfig:
    t = TrainConfig(
        b=cfg["train.b"],
        m=cfg["train.m"],
        r_s=cfg["train.r_s"],
        epochs=cfg["train.epochs"],
        warmup_steps=cfg["train.warmup_steps"],
        base_lr=cfg["train.base_lr"],
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
        trust_coefficient=cfg["train.trust_coefficient"],
        optimizer=cfg["train.optimizer"],
        hidden=tuple(cfg["train.hidden"]),
        repr_dim=cfg["train.repr_dim"],
        head=tuple(cfg["train.head"]),
        augment=augment_config(cfg),
        seed=cfg["run.seed"],
        dataset=cfg["data.path"],
        val_fraction=cfg["train.val_fraction"],
    )
    t.validate()
    return t


def augment_config(cfg: dict) -> AugmentConfig:
    scale = cfg["augment.scale_range"]
    if len(scale) != 2:
        raise ValidationError(f"config key 'augment.scale_range' needs two values, got {scale}")
    a = AugmentConfig(cfg["augment.noise_sigma"], cfg["augment.dropout_p"], (scale[0], scale[1]))
    a.validate()
    return a


class Run:
    """Output directory plus a manifest recording config, timestamps and artifacts."""

    def __init__(self, command: str, cfg: dict, out: str):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config": cfg,
            "seed": cfg["run.seed"],
            "start": _now(),
            "artifacts": {},
        }

    def path(self, key: str, name: str) -> Path:
        p = self.out / name
        self.manifest["artifacts"][key] = str(p)
        return p

    def finish(self, **extra):
        self.manifest.update(extra)
        self.manifest["end"] = _now()
        manifest_path = self.out / "manifest.json"
        self.manifest["artifacts"]["manifest"] = str(manifest_path)
        manifest_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _require_dataset(path: str, key: str):
    if not path:
        raise ValidationError(f"dataset path is not set ({key})")
    return io.read_dataset(path)


# -- subcommands ---------------------------------------------------------------


def cmd_pretrain(args, cfg) -> int:
    tcfg = train_config(cfg)
    x, y, _ = _require_dataset(cfg["data.path"], "data.path")
    run = Run("pretrain", cfg, args.out)
    run.path("checkpoint", "checkpoint.clmp")
    run.path("metrics", "metrics.jsonl")
    _, records = train(tcfg, x, y, out_dir=run.out)
    run.finish(dataset_hash=io.git_blob_hash(cfg["data.path"]), epochs_completed=len(records))
    if records:
        last = records[-1]
        print(f"epoch={last.epoch} loss={last.mean_log_loss:.4f} neighbors={last.mean_neighbors:.3f}")
    return 0


def cmd_simulate(args, cfg) -> int:
    radii = cfg["randorg.radii"]
    if not radii:
        raise ValidationError("randorg.radii is empty")
    if cfg["randorg.n_seeds"] < 1:
        raise ValidationError("randorg.n_seeds must be >= 1")
    template = RandOrgConfig(
        N=cfg["randorg.N"],
        D=cfg["randorg.D"],
        radius=0.0,
        kick_amplitude=cfg["randorg.kick_amplitude"],
        reciprocal=cfg["randorg.reciprocal"],
        max_steps=cfg["randorg.max_steps"],
    )
    template.validate()
    seeds = [cfg["run.seed"] + k for k in range(cfg["randorg.n_seeds"])]
    run = Run("simulate", cfg, args.out)
    out = run.path("sweep", "sweep.jsonl")
    rows = run_density_sweep(template, radii, seeds)
    out.write_text("")
    for row in rows:
        io.append_jsonl(out, row)
    table = summarize_sweep(rows, template.max_steps)
    run.finish(summary={str(r): v for r, v in table.items()})
    for r, v in table.items():
        print(f"radius={r} absorbed_fraction={v['absorbed_fraction']:.3f} mean_steps={v['mean_steps']:.1f}")
    return 0


def _load_backbone(path):
    return io.load_checkpoint(path, backbone_only=True)


def _check_width(net, data, path):
    if data.shape[1] != net.in_dim:
        raise ValidationError(
            f"checkpoint expects input width {net.in_dim} but dataset {path} has width {data.shape[1]}"
        )


def cmd_analyze(args, cfg) -> int:
    net = _load_backbone(args.checkpoint)
    data_path = args.dataset or cfg["data.path"]
    x, y, _ = _require_dataset(data_path, "--dataset")
    _check_width(net, x, data_path)
    run = Run("analyze", cfg, args.out)
    run.manifest["artifacts"]["checkpoint"] = str(args.checkpoint)

    reps = net.encode(x)
    aug = augment_config(cfg)
    by_class = {int(c): x[y == c] for c in np.unique(y)}
    report = geometry_report(
        net.encode,
        by_class,
        lambda s, m, rng: augment_views(s, m, aug, rng),
        m_a=cfg["analyze.augmentations"],
        repeats=cfg["analyze.repeats"],
        samples_per_repeat=cfg["analyze.samples"],
        seed=cfg["run.seed"],
    )
    run.path("geometry_report", "geometry_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    lam = eigenspectrum(reps)
    write_spectrum_csv(run.path("spectrum", "spectrum.csv"), lam)
    lo = cfg["analyze.rank_min"] or None
    hi = cfg["analyze.rank_max"] or None
    fit = power_law_fit(lam, lo, hi)
    run.path("spectrum_fit", "spectrum_fit.json").write_text(json.dumps(fit.to_dict(), indent=2) + "\n")
    run.finish(dataset_hash=io.git_blob_hash(data_path), exponent=fit.exponent)
    print(f"exponent={fit.exponent:.6f} fit_range={fit.fit_range[0]}-{fit.fit_range[1]}")
    return 0


def cmd_probe(args, cfg) -> int:
    net = _load_backbone(args.checkpoint)
    xtr, ytr, ktr = io.read_dataset(args.train)
    xte, yte, kte = io.read_dataset(args.test)
    _check_width(net, xtr, args.train)
    _check_width(net, xte, args.test)
    if ktr != kte or not np.isin(np.unique(yte), np.unique(ytr)).all():
        raise ValidationError(f"label spaces differ: train has {ktr} classes, test has {kte}")
    acc = linear_probe(net.encode(xtr), ytr, net.encode(xte), yte,
                       epochs=cfg["probe.epochs"], lr=cfg["probe.lr"])
    run = Run("probe", cfg, args.out)
    run.manifest["artifacts"].update(checkpoint=str(args.checkpoint), train=str(args.train), test=str(args.test))
    run.finish(accuracy=acc, dataset_hash=io.git_blob_hash(args.train))
    print(f"accuracy={acc}")
    return 0


def cmd_sweep(args, cfg) -> int:
    tcfg = train_config(cfg)
    values = cfg["sweep.values"]
    if not values:
        raise ValidationError("sweep.values is empty")
    x, y, _ = _require_dataset(cfg["data.path"], "data.path")
    run = Run("sweep", cfg, args.out)
    out = run.path("sweep", "sweep.jsonl")
    rows = sweep(tcfg, cfg["sweep.axis"], values, x, y,
                 probe_epochs=cfg["probe.epochs"], probe_lr=cfg["probe.lr"])
    out.write_text("")
    for row in rows:
        io.append_jsonl(out, row)
        print(f"{row['axis']}={row['value']} accuracy={row['probe_accuracy']}")
    run.finish(dataset_hash=io.git_blob_hash(cfg["data.path"]))
    return 0


def cmd_gen_blobs(args, cfg) -> int:
    common = dict(
        num_classes=cfg["blobs.classes"],
        d=cfg["blobs.d"],
        separation=cfg["blobs.separation"],
        sigma=cfg["blobs.sigma"],
        center_seed=cfg["blobs.center_seed"],
    )
    run = Run("gen-blobs", cfg, args.out)
    seed = cfg["run.seed"]
    x, y = make_blobs(per_class=cfg["blobs.per_class"], seed=seed, **common)
    io.write_dataset(run.path("train", "blobs_train.clmp"), x, y, cfg["blobs.classes"])
    if cfg["blobs.test_per_class"] > 0:
        xt, yt = make_blobs(per_class=cfg["blobs.test_per_class"], seed=seed + 1_000_003, **common)
        io.write_dataset(run.path("test", "blobs_test.clmp"), xt, yt, cfg["blobs.classes"])
    run.finish(dataset_hash=io.git_blob_hash(run.out / "blobs_train.clmp"))
    print(f"wrote {run.out / 'blobs_train.clmp'}")
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "probe": cmd_probe,
    "sweep": cmd_sweep,
    "gen-blobs": cmd_gen_blobs,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    common.add_argument("--out", default="clamp_out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clamp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="pretrain an encoder with the packing loss")
    sub.add_parser("simulate", parents=[common], help="random-organization density sweep")
    p = sub.add_parser("analyze", parents=[common], help="geometry report and eigenspectrum")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p = sub.add_parser("probe", parents=[common], help="linear probe on frozen representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    sub.add_parser("sweep", parents=[common], help="hyperparameter sweep with probe accuracy")
    sub.add_parser("gen-blobs", parents=[common], help="write the synthetic blob benchmark")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args.config, args.set, args.seed)
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
