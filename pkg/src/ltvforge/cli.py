"""``ltvforge`` command line: gen-data, train, eval, ablate and grad-check.

Every command reads one JSON config file. Exit codes: 0 ok, 2 input or
configuration error, 3 numerical abort, 4 checkpoint/data mismatch,
5 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .ablation import check_ladder, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .data import GeneratorConfig, chronological_split, config_dict, dataset_stats, generate, load_csv, write_csv
from .evaluation import DEFAULT_RECALL_K, evaluate
from .exceptions import ArtifactMismatchError, ConfigurationError, InputError, LTVForgeError, NumericalError
from .model import STAGES, ModelConfig, large_scale_config
from .training import train
from .verification import CHECK_COMPONENTS, TOLERANCE, component_checks, tiny_problem

logger = logging.getLogger("ltvforge")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_MISMATCH = 4
EXIT_VERIFY = 5

SECTIONS = ("generator", "model", "paths", "options")
PATH_KEYS = ("data", "stats", "eval_data", "checkpoint", "history", "report")
OPTION_DEFAULTS = {
    "recall_k": DEFAULT_RECALL_K,
    "stages": list(STAGES),
    "test_frac": 0.4,
    "val_frac": 0.1,
    "eval_split": "test",
    "self_test": False,
    "check_seed": 0,
}


class RunConfig:
    """Parsed config file; relative paths resolve against the file's directory."""

    def __init__(self, raw: dict, base_dir: Path, seed: int | None = None, paper_defaults: bool = False):
        if not isinstance(raw, dict):
            raise ConfigurationError("config root must be a JSON object")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}; allowed {list(SECTIONS)}")
        gen = dict(raw.get("generator", {}))
        model = dict(raw.get("model", {}))
        paths = dict(raw.get("paths", {}))
        options = dict(raw.get("options", {}))
        _reject_unknown(gen, {f.name for f in fields(GeneratorConfig)}, "generator")
        _reject_unknown(paths, set(PATH_KEYS), "paths")
        _reject_unknown(options, set(OPTION_DEFAULTS), "options")
        if seed is not None:
            gen["seed"] = seed
            model["seed"] = seed
            options["check_seed"] = seed
        self.generator = GeneratorConfig(**gen)
        base = large_scale_config() if paper_defaults else ModelConfig()
        merged = base.to_dict()
        if "cascade" in model and isinstance(model["cascade"], dict):
            merged["cascade"] = {**merged["cascade"], **model.pop("cascade")}
        _reject_unknown(model, set(merged), "model")
        merged.update(model)
        self.model = ModelConfig.from_dict(merged)
        self.paths = {k: (base_dir / v) for k, v in paths.items() if v is not None}
        self.options = {**OPTION_DEFAULTS, **options}
        if self.options["eval_split"] not in ("test", "all"):
            raise ConfigurationError("options.eval_split must be 'test' or 'all'")
        self.raw = raw

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> RunConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        return cls(raw, path.resolve().parent, **kwargs)

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise ConfigurationError(f"paths.{key} is required for this command")
        return self.paths[key]

    def echo(self) -> dict:
        return {"generator": config_dict(self.generator), "model": self.model.to_dict(),
                "options": dict(self.options)}


def _reject_unknown(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"unknown {name} keys {sorted(unknown)}")


def build_id() -> str:
    """Hash of the package sources, so reports name the exact code that produced them."""
    digest = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob("*.py")):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:12]


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _splits(cfg: RunConfig, ds):
    return chronological_split(ds, cfg.options["test_frac"], cfg.options["val_frac"])


# -- commands -------------------------------------------------------------------------------
def cmd_gen_data(cfg: RunConfig) -> int:
    ds = generate(cfg.generator)
    out = cfg.path("data")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out)
    stats_path = cfg.paths.get("stats", out.with_name(out.name + ".stats.json"))
    _write_json(stats_path, {"generator": config_dict(cfg.generator), "stats": dataset_stats(ds)})
    logger.info("wrote %d rows to %s", len(ds), out)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    ds = load_csv(cfg.path("data"))
    train_ds, val_ds, _ = _splits(cfg, ds)
    history_path = cfg.path("history")
    history_path.parent.mkdir(parents=True, exist_ok=True)
    with open(history_path, "w", encoding="utf-8") as fh:
        def log_epoch(row: dict) -> None:
            # written as soon as the epoch ends so a later abort keeps the partial history
            fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.flush()

        model, _ = train(train_ds, val_ds if len(val_ds) else None, cfg.model, on_epoch=log_epoch)
    save_checkpoint(model, cfg.path("checkpoint"))
    return EXIT_OK


def _load_eval_data(cfg: RunConfig, model):
    ds = load_csv(cfg.paths["eval_data"] if "eval_data" in cfg.paths else cfg.path("data"))
    if ds.numeric_names != model.numeric_names or ds.categorical_names != model.categorical_names:
        raise ArtifactMismatchError(
            f"data columns {ds.numeric_names + ds.categorical_names} do not match the checkpoint schema "
            f"{model.numeric_names + model.categorical_names}")
    ds.cardinalities = list(model.net.cardinalities)
    ds.validate()
    if cfg.options["eval_split"] == "test" and "eval_data" not in cfg.paths:
        ds = _splits(cfg, ds)[2]
    return ds


def cmd_eval(cfg: RunConfig) -> int:
    model = load_checkpoint(cfg.path("checkpoint"))
    ds = _load_eval_data(cfg, model)
    report = evaluate(model, ds, cfg.options["recall_k"])
    _write_json(cfg.path("report"), {
        "command": "eval",
        "build_id": build_id(),
        "version": __version__,
        "seed": model.cfg.seed,
        "config": {"model": model.cfg.to_dict(), "options": dict(cfg.options)},
        "rows": len(ds),
        "metrics": report.to_dict(),
    })
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    stages = check_ladder(cfg.options["stages"])
    ds = load_csv(cfg.path("data"))
    train_ds, val_ds, test_ds = _splits(cfg, ds)
    result = run_ablation(train_ds, val_ds if len(val_ds) else None, test_ds, cfg.model, stages,
                          cfg.options["recall_k"])
    _write_json(cfg.path("report"), {"command": "ablate", "build_id": build_id(), "version": __version__,
                                     "seed": cfg.model.seed, "config": cfg.echo(), **result})
    return EXIT_OK


def cmd_grad_check(cfg: RunConfig) -> int:
    corrupt = 2.0 if cfg.options["self_test"] else 1.0
    results = component_checks(tiny_problem(seed=cfg.options["check_seed"]), corrupt=corrupt)
    for comp in CHECK_COMPONENTS:
        r = results[comp]
        print(f"{comp:<11} worst_rel_err={r['worst']:.3e} {'PASS' if r['passed'] else 'FAIL'}")
    ok = all(r["passed"] for r in results.values())
    if "report" in cfg.paths:
        _write_json(cfg.path("report"), {"command": "grad-check", "build_id": build_id(),
                                         "tolerance": TOLERANCE, "self_test": bool(cfg.options["self_test"]),
                                         "components": results, "passed": ok})
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltvforge", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    parser.add_argument("--paper-defaults", action="store_true",
                        help="start from the published model hyperparameters instead of desk defaults")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("LTVFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, paper_defaults=args.paper_defaults)
        if args.threads is not None:
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](cfg)
        return COMMANDS[args.command](cfg)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ArtifactMismatchError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigurationError, InputError, LTVForgeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
