"""Command-line entry point: synth -> pseudo -> train -> refine / eval / compare, plus inspect.

Exit codes: 0 ok, 1 internal error, 2 config error, 3 missing prerequisite,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io as _io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np
import torch
from filelock import FileLock, Timeout

from patchrefine import io
from patchrefine.core import ConfigError, split_patches
from patchrefine.losses import LossConfig
from patchrefine.metrics import DEFAULT_BOUNDARY_DISTANCE, EvalReport
from patchrefine.network import Checkpoint, NetworkConfig
from patchrefine.pipeline.data import PRN_TRAIN_ROLE, REPORT_ROLE, ROLES
from patchrefine.pipeline.evaluation import evaluate, format_table
from patchrefine.pipeline.presets import desk_synthetic_config, desk_train_config
from patchrefine.pipeline.synthetic import gen_synthetic_corpus
from patchrefine.pipeline.training import MissingPseudoLabels, TrainConfig, train
from patchrefine.pseudolabel import OBJECTIVES, generate_pseudo_labels

log = logging.getLogger("patchrefine")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_PREREQ, EXIT_ARTIFACT = 0, 1, 2, 3, 4
DATA_ROOT_ENV = "PATCHREFINE_DATA_ROOT"
CONFIG_ECHO = "effective_config.ini"
REPORT_TSV = "report.tsv"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclasses.dataclass(frozen=True)
class MetricOptions:
    d: float = DEFAULT_BOUNDARY_DISTANCE
    objective: str = "fg_iou"

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    workdir: Path
    threads: int
    synthetic: Any
    network: NetworkConfig
    loss: LossConfig
    train: TrainConfig
    metrics: MetricOptions

    @property
    def corpus_dir(self) -> Path:
        return self.workdir / "corpus"

    @property
    def pseudo_dir(self) -> Path:
        return self.workdir / "pseudo"

    @property
    def train_dir(self) -> Path:
        return self.workdir / "train"

    @property
    def checkpoint_path(self) -> Path:
        return self.train_dir / "checkpoint.pt"

    @property
    def refine_dir(self) -> Path:
        return self.workdir / "refined"

    @property
    def report_dir(self) -> Path:
        return self.workdir / "reports"


def _scalar_fields(cls) -> dict[str, Any]:
    skip = {"loss", "network"}
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}


def _parse_value(raw: str, default: Any, where: str) -> Any:
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw.strip()
    except ValueError:
        raise CliError(f"{where}: cannot parse {raw!r} as {type(default).__name__}", EXIT_CONFIG) from None


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def _section_values(parser, section, base) -> dict:
    fields = _scalar_fields(type(base))
    values = {}
    if parser.has_section(section):
        for key, raw in parser.items(section):
            if key not in fields:
                raise CliError(f"[{section}] unknown key {key!r}", EXIT_CONFIG)
            values[key] = _parse_value(raw, getattr(base, key), f"[{section}] {key}")
    return values


def _build(base, values, section):
    try:
        return dataclasses.replace(base, **values)
    except (ValueError, TypeError) as exc:
        raise CliError(f"[{section}] {exc}", EXIT_CONFIG) from None


def load_config(path: str | None, seed: int | None = None, threads: int | None = None) -> RunConfig:
    """Merge a sectioned key-value file over the built-in desk defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        if not Path(path).exists():
            raise CliError(f"config file {path} not found", EXIT_CONFIG)
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise CliError(f"{path}: {exc}", EXIT_CONFIG) from None
    known = {"paths", "run", "synthetic", "network", "loss", "train", "metrics"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}", EXIT_CONFIG)

    for section, allowed in (("paths", {"workdir"}), ("run", {"threads"})):
        if parser.has_section(section):
            extra = set(parser.options(section)) - allowed
            if extra:
                raise CliError(f"[{section}] unknown keys: {sorted(extra)}", EXIT_CONFIG)
    workdir = Path(parser.get("paths", "workdir", fallback=os.environ.get(DATA_ROOT_ENV, "prn_work")))
    n_threads = threads if threads is not None else int(parser.get("run", "threads", fallback="1"))
    if n_threads < 1:
        raise CliError("[run] threads must be at least 1", EXIT_CONFIG)

    base_train = desk_train_config()
    syn_values = _section_values(parser, "synthetic", desk_synthetic_config())
    net_values = _section_values(parser, "network", base_train.network)
    loss_values = _section_values(parser, "loss", base_train.loss)
    train_values = _section_values(parser, "train", base_train)
    metric_values = _section_values(parser, "metrics", MetricOptions())
    if seed is not None:
        syn_values["seed"] = net_values["seed"] = train_values["seed"] = seed

    synthetic = _build(desk_synthetic_config(), syn_values, "synthetic")
    network = _build(base_train.network, net_values, "network")
    loss = _build(base_train.loss, loss_values, "loss")
    train_cfg = _build(base_train, {**train_values, "loss": loss, "network": network}, "train")
    metrics = _build(MetricOptions(), metric_values, "metrics")
    return RunConfig(workdir, n_threads, synthetic, network, loss, train_cfg, metrics)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["paths"] = {"workdir": str(cfg.workdir)}
    parser["run"] = {"threads": str(cfg.threads)}
    for section, obj in (
        ("synthetic", cfg.synthetic),
        ("network", cfg.network),
        ("loss", cfg.loss),
        ("train", cfg.train),
        ("metrics", cfg.metrics),
    ):
        parser[section] = {k: _format_value(getattr(obj, k)) for k in _scalar_fields(type(obj))}
    buf = _io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def echo_config(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / CONFIG_ECHO).write_text(dump_config(cfg))


def _require_corpus(cfg: RunConfig) -> None:
    if not (cfg.corpus_dir / io.MANIFEST_NAME).exists():
        raise CliError(f"missing corpus manifest {cfg.corpus_dir / io.MANIFEST_NAME}; run 'synth' first", EXIT_PREREQ)


def _require_checkpoint(cfg: RunConfig) -> Checkpoint:
    if not cfg.checkpoint_path.exists():
        raise CliError(f"missing checkpoint {cfg.checkpoint_path}; run 'train' first", EXIT_PREREQ)
    try:
        return Checkpoint.load(cfg.checkpoint_path, expected=cfg.network)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None


def cmd_synth(cfg: RunConfig, args) -> int:
    splits = gen_synthetic_corpus(cfg.synthetic)
    path = io.write_corpus(cfg.corpus_dir, splits, cfg.synthetic.to_dict())
    echo_config(cfg, cfg.corpus_dir)
    print(f"wrote {sum(len(v) for v in splits.values())} samples; manifest {path}")
    return EXIT_OK


def load_with_pseudo(cfg: RunConfig, roles=(PRN_TRAIN_ROLE,), generate: bool = False):
    """Training-role samples with pseudo-labels from the cache (optionally filling it)."""
    _require_corpus(cfg)
    splits = io.read_corpus(cfg.corpus_dir, roles)
    cache = io.PseudoLabelCache(cfg.pseudo_dir)
    p = cfg.network.patch_size
    written = skipped = 0
    for s in splits.get(PRN_TRAIN_ROLE, []):
        mask = cache.lookup(s, p)
        if mask is None:
            if not generate:
                continue
            mask = generate_pseudo_labels(s.logit_map, s.ground_truth, p, cfg.metrics.objective)
            cache.store(s, p, mask)
            written += 1
        else:
            skipped += 1
        s.pseudo_label, s.pseudo_patch_size = mask, p
    if written:
        cache.flush()
    return splits, written, skipped


def cmd_pseudo(cfg: RunConfig, args) -> int:
    _, written, skipped = load_with_pseudo(cfg, generate=True)
    echo_config(cfg, cfg.pseudo_dir)
    print(f"P={cfg.network.patch_size}: generated {written}, skipped {skipped}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    splits, _, _ = load_with_pseudo(cfg)
    samples = splits.get(PRN_TRAIN_ROLE, [])
    if not samples:
        raise CliError("corpus has no validation-role samples to train on", EXIT_PREREQ)
    cfg.train_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, cfg.train_dir)
    history_path = cfg.train_dir / "history.tsv"
    with open(history_path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["epoch", "lr", "train_loss", "wall_time"])

        def on_epoch(r):
            writer.writerow([r.epoch, f"{r.lr:.6g}", f"{r.train_loss:.6f}", f"{r.wall_time:.2f}"])
            f.flush()

        try:
            checkpoint, history = train(cfg.train, samples, on_epoch)
        except MissingPseudoLabels as exc:
            raise CliError(f"{exc} (cache {cfg.pseudo_dir})", EXIT_PREREQ) from None
    checkpoint.save(cfg.checkpoint_path)
    print(f"trained {len(history)} epochs; best loss {checkpoint.best_val_loss:.5f} at epoch {checkpoint.training_epoch}")
    return EXIT_OK


def cmd_refine(cfg: RunConfig, args) -> int:
    model = _require_checkpoint(cfg).build()
    _require_corpus(cfg)
    samples = io.read_corpus(cfg.corpus_dir, [REPORT_ROLE]).get(REPORT_ROLE, [])
    out = cfg.refine_dir
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        final, pred = model.refine(s.logit_map)
        io.write_logits_png(out / f"{s.sample_id}.final.png", final)
        io.write_raw(out / f"{s.sample_id}.final.f32", final)
        io.write_mask(out / f"{s.sample_id}.pred.png", pred)
    echo_config(cfg, out)
    print(f"refined {len(samples)} samples into {out}")
    return EXIT_OK


def run_evaluation(cfg: RunConfig) -> list[EvalReport]:
    model = _require_checkpoint(cfg).build()
    _require_corpus(cfg)
    splits = io.read_corpus(cfg.corpus_dir, [PRN_TRAIN_ROLE, REPORT_ROLE])
    val = splits.get(PRN_TRAIN_ROLE, [])
    test = splits.get(REPORT_ROLE, [])
    if not test:
        raise CliError("corpus has no test-role samples", EXIT_PREREQ)
    return evaluate(
        model, test, cfg.network.patch_size, threshold_samples=val or None,
        training_samples=val, d=cfg.metrics.d, objective=cfg.metrics.objective,
    )


def write_reports(reports: list[EvalReport], directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / REPORT_TSV
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["method", "miou", "patch_miou", "mba", "mae", "samples"])
        for r in reports:
            writer.writerow([r.method_name, f"{r.miou:.6f}", f"{r.patch_miou:.6f}", f"{r.mba:.6f}", f"{r.mae:.6f}", r.sample_count])
    return path


def read_reports(path: Path) -> list[EvalReport]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    return [
        EvalReport(r["method"], float(r["miou"]), float(r["patch_miou"]), float(r["mba"]), float(r["mae"]), int(r["samples"]))
        for r in rows
    ]


def cmd_eval(cfg: RunConfig, args) -> int:
    path = write_reports(run_evaluation(cfg), cfg.report_dir)
    echo_config(cfg, cfg.report_dir)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    reports = run_evaluation(cfg)
    write_reports(reports, cfg.report_dir)
    echo_config(cfg, cfg.report_dir)
    print(format_table(reports))
    return EXIT_OK


def patch_bias_map(logits: np.ndarray, gt: np.ndarray, patch_size: int) -> np.ndarray:
    """Per-patch mean logit minus mean ground truth, expanded to pixels."""
    g = logits.shape[0] // patch_size
    cells = [
        float(np.mean(p) - np.mean(t))
        for p, t in zip(split_patches(logits.astype(np.float64), g), split_patches(gt.astype(np.float64), g))
    ]
    grid = np.array(cells).reshape(g, g)
    return np.kron(grid, np.ones((patch_size, patch_size)))


def cmd_inspect(cfg: RunConfig, args) -> int:
    _require_corpus(cfg)
    splits = io.read_corpus(cfg.corpus_dir)
    found = [s for role in splits.values() for s in role if s.sample_id == args.sample_id]
    if not found:
        raise CliError(f"unknown sample {args.sample_id!r}", EXIT_ARTIFACT)
    s = found[0]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.network.patch_size
    bias_patch = cfg.synthetic.bias_patch if s.logit_map.shape[0] % cfg.synthetic.bias_patch == 0 else p
    bias = patch_bias_map(s.logit_map, s.ground_truth, bias_patch)
    io.write_heatmap(out / f"{s.sample_id}.base.png", s.logit_map)
    io.write_heatmap(out / f"{s.sample_id}.gt.png", s.ground_truth)
    io.write_heatmap(out / f"{s.sample_id}.bias.png", bias, -1.0, 1.0)
    io.write_raw(out / f"{s.sample_id}.bias.f32", bias)
    pseudo = generate_pseudo_labels(s.logit_map, s.ground_truth, p, cfg.metrics.objective)
    io.write_heatmap(out / f"{s.sample_id}.pseudo.png", pseudo)
    if cfg.checkpoint_path.exists():
        final, _ = _require_checkpoint(cfg).build().refine(s.logit_map)
        io.write_heatmap(out / f"{s.sample_id}.prn.png", final)
    print(f"wrote diagnostics for {s.sample_id} to {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pseudo": cmd_pseudo,
    "train": cmd_train,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prn", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="sectioned key-value config file")
    parser.add_argument("--seed", type=int, help="override every seed in the config")
    parser.add_argument("--threads", type=int, help="torch intra-op threads")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "inspect":
            p.add_argument("sample_id")
            p.add_argument("out_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.threads)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command is None:
            raise CliError("no command given", EXIT_CONFIG)
        torch.set_num_threads(cfg.threads)
        cfg.workdir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(cfg.workdir / ".prn.lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            raise CliError(f"another prn command holds {cfg.workdir}", EXIT_INTERNAL) from None
        try:
            return COMMANDS[args.command](cfg, args)
        finally:
            lock.release()
    except CliError as exc:
        print(f"prn: error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - map everything else to the internal-error code
        log.exception("internal error")
        print(f"prn: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
