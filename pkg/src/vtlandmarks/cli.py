"""Command-line entry point: ``vtlm <subcommand> [options]``.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numerical failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path


EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
OUTPUT_ROOT_ENV = "VTLM_OUTPUT_ROOT"

log = logging.getLogger("vtlm")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _positive(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v
    return parse


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / name


def _write_run(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **{k: v for k, v in resolved.items() if k not in ("func", "config")}}
    (out_dir / "run.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


# ---- parser -------------------------------------------------------------------------

TRAIN_FIELDS = ("max_epochs", "batch_size", "lr", "val_fraction", "patience", "min_delta", "sigma", "precision")


def _add_train_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=("flatnet", "convonly"), default=None, help="network architecture")
    p.add_argument("--filters", default=None,
                   help="filter preset (paper, desk, overfit) or a JSON object of widths")
    p.add_argument("--dilations", default=None, help="five comma-separated dilation rates")
    p.add_argument("--group-sizes", default=None, help="Flat-net landmark group sizes, e.g. 5,4,4,4,4")
    p.add_argument("--max-epochs", type=_positive("--max-epochs"), default=None)
    p.add_argument("--batch-size", type=_positive("--batch-size"), default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--patience", type=_positive("--patience"), default=None)
    p.add_argument("--min-delta", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None, help="heat-map Gaussian sigma in pixels")
    p.add_argument("--precision", choices=("float32", "float64"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=_positive("--jobs"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtlm", description="Heat-map landmark localization (Flat-net).")
    parser.add_argument("--config", type=Path, default=None, help="JSON file of option defaults (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--subjects", type=_positive("--subjects"), default=None)
    p.add_argument("--articulations", type=_positive("--articulations"), default=None)
    p.add_argument("--size", type=_positive("--size"), default=None, help="square image size in pixels")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--morphology-amplitude", type=float, default=None)
    p.add_argument("--articulation-amplitude", type=float, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("augment", help="apply the augmentation ops to a corpus")
    p.add_argument("--manifest", type=Path, required=False, default=None)
    p.add_argument("--augment-ops", default=None, help="op ids, e.g. 1..10 or 3,5")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("train", help="train Flat-net or ConvOnly on a corpus")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="model directory")
    _add_train_options(p)

    p = sub.add_parser("predict", help="localize landmarks on an image")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--image", type=Path, default=None, help="8-bit PGM image")
    p.add_argument("--out", type=Path, default=None, help="output CSV path")
    p.add_argument("--emit-heatmaps", action="store_true", help="also write 16-bit PGM heat-maps")

    p = sub.add_parser("eval", help="run the CV or LoSo evaluation scheme")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--scheme", default=None, help="cv or loso")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--augment-ops", default=None)
    p.add_argument("--baseline", choices=("none", "convonly", "flatnet"), default=None,
                   help="also evaluate a second architecture under the same harness")
    p.add_argument("--baseline-filters", default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_train_options(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every engine op and a Flat-net group")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    return parser


DEFAULTS = {
    "synth": {"subjects": 9, "articulations": 12, "size": 256, "seed": 0, "morphology_amplitude": 1.0,
              "articulation_amplitude": 1.0},
    "augment": {"augment_ops": "1..10", "seed": 0},
    "train": {"arch": "flatnet", "filters": "paper", "dilations": "1,2,4,8,16", "group_sizes": "5,4,4,4,4",
              "max_epochs": 30, "batch_size": 4, "lr": 1e-4, "val_fraction": 0.05, "patience": 10,
              "min_delta": 1e-5, "sigma": 10.0, "precision": "float32", "jobs": 1},
    "predict": {"emit_heatmaps": False},
    "eval": {"scheme": "loso", "k": 10, "augment_ops": "1..10", "baseline": "none", "baseline_filters": None},
    "gradcheck": {"seed": 0, "tolerance": 1e-4},
}
DEFAULTS["eval"] = {**DEFAULTS["train"], **DEFAULTS["eval"]}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    merged = dict(DEFAULTS[args.command])
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        doc = json.loads(args.config.read_text())
        section = doc.get(args.command, doc)
        merged.update({k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict) or k == "filters"})
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "verbose"):
            merged[k] = v
    merged["command"] = args.command
    return merged


# ---- commands -------------------------------------------------------------------------

def _train_config(r: dict):
    from .training import TrainConfig

    return TrainConfig(max_epochs=int(r["max_epochs"]), batch_size=int(r["batch_size"]), lr=float(r["lr"]),
                       val_fraction=float(r["val_fraction"]), patience=int(r["patience"]),
                       min_delta=float(r["min_delta"]), seed=int(r["seed"]), sigma=float(r["sigma"]),
                       precision=r["precision"])


def _filters(r: dict, key: str = "filters"):
    value = r[key]
    if isinstance(value, str) and value.strip().startswith("{"):
        value = json.loads(value)
    return value


def _trainer(r: dict, arch: str | None = None, filters=None):
    from .pipeline import ModelTrainer

    arch = arch or r["arch"]
    dil = _int_list(r["dilations"]) if isinstance(r["dilations"], str) else list(r["dilations"])
    groups = _int_list(r["group_sizes"]) if isinstance(r["group_sizes"], str) else list(r["group_sizes"])
    return ModelTrainer(arch, filters if filters is not None else _filters(r), _train_config(r), tuple(groups),
                        tuple(dil) if arch == "flatnet" else None)


def _require_seed(r: dict) -> None:
    if r.get("seed") is None:
        raise UsageError(f"--seed is required for {r['command']} (or set it in the config file)")


def cmd_synth(r: dict) -> int:
    from .dataset import save_corpus
    from .synth import SynthConfig, generate_synthetic

    cfg = SynthConfig(int(r["subjects"]), int(r["articulations"]), (int(r["size"]), int(r["size"])), int(r["seed"]),
                      float(r["morphology_amplitude"]), float(r["articulation_amplitude"]))
    out = Path(r.get("out") or _default_out("synth"))
    corpus = generate_synthetic(cfg)
    path = save_corpus(corpus, out / "manifest.json")
    _write_run(out, "synth", r)
    log.info("wrote %d samples to %s", len(corpus), path)
    return EXIT_OK


def cmd_augment(r: dict) -> int:
    from .augment import augment_corpus
    from .dataset import load_corpus, save_corpus

    if r.get("manifest") is None:
        raise UsageError("augment needs --manifest")
    ops = _int_list(r["augment_ops"])
    if not ops or any(not 1 <= o <= 10 for o in ops):
        raise UsageError(f"--augment-ops must list ids in 1..10, got {r['augment_ops']!r}")
    corpus = load_corpus(r["manifest"]).originals()
    out = Path(r.get("out") or _default_out("augment"))
    aug = augment_corpus(corpus, int(r["seed"]), ops)
    save_corpus(aug, out / "manifest.json")
    _write_run(out, "augment", r)
    log.info("augmented %d -> %d samples", len(corpus), len(aug))
    return EXIT_OK


def _fit_groups(trainer, corpus, seed: int, jobs: int):
    """Train the group networks, optionally in worker processes."""
    from concurrent.futures import ProcessPoolExecutor

    from .flatnet import NetworkSpec
    from .training import TrainConfig, TrainedModel

    cfg = TrainConfig(**{**trainer.config.to_dict(), "seed": seed})
    specs = [NetworkSpec.from_dict({**s.to_dict(), "input_size": list(corpus.image_size)}) for s in trainer.specs()]
    jobs_args = [(s, corpus, cfg, k) for k, s in enumerate(specs)]
    if jobs <= 1:
        entries = [_train_one(a) for a in jobs_args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_train_one, jobs_args))
    return TrainedModel(entries, cfg.sigma, cfg.seed, cfg.to_dict())


def _train_one(args):
    from .flatnet import Network, init_params
    from .training import _seed, train_network

    spec, corpus, cfg, k = args
    net = Network(spec, init_params(spec, _seed(cfg.seed, k, 0), cfg.dtype))
    return train_network(net, corpus.samples, cfg, _seed(cfg.seed, k, 1), label=f"group{k + 1}")


def cmd_train(r: dict) -> int:
    from .dataset import load_corpus
    from .training import save_model

    _require_seed(r)
    if r.get("manifest") is None:
        raise UsageError("train needs --manifest")
    trainer = _trainer(r)
    corpus = load_corpus(r["manifest"])
    out = Path(r.get("out") or _default_out("model"))
    model = _fit_groups(trainer, corpus, int(r["seed"]), int(r["jobs"]))
    save_model(model, out)
    _write_run(out, "train", r)
    log.info("trained %d network(s), %d weights -> %s", len(model.entries), model.total_weights, out)
    return EXIT_OK


def cmd_predict(r: dict) -> int:
    from .heatmap import HeatMapStack, export_pgm
    from .landmarks import LANDMARK_IDS
    from .pgm import read_pgm
    from .training import load_model, predict

    if r.get("model") is None or r.get("image") is None:
        raise UsageError("predict needs --model and --image")
    model = load_model(r["model"])
    image = read_pgm(r["image"])
    try:
        result = predict(model, image, keep_maps=bool(r["emit_heatmaps"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(r.get("out") or _default_out("predict") / "landmarks.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["landmark_id", "x", "y", "degenerate"])
        for lid, (x, y), deg in zip(LANDMARK_IDS, result.landmarks.coords, result.degenerate):
            w.writerow([lid, int(x), int(y), int(deg)])
    if r["emit_heatmaps"]:
        stack = HeatMapStack(result.maps, model.sigma, LANDMARK_IDS)
        export_pgm(stack, out.parent / "heatmaps", Path(r["image"]).stem)
    _write_run(out.parent, "predict", r)
    return EXIT_OK


def cmd_eval(r: dict) -> int:
    from .dataset import load_corpus
    from .evaluation import report_emit, run_cv, run_loso
    from .pipeline import Augmenter

    _require_seed(r)
    scheme = str(r["scheme"]).lower()
    if scheme not in ("cv", "loso"):
        raise UsageError(f"unknown scheme {r['scheme']!r}; valid values: cv, loso")
    if r.get("manifest") is None:
        raise UsageError("eval needs --manifest")
    corpus = load_corpus(r["manifest"])
    seed, jobs = int(r["seed"]), int(r["jobs"])
    trainers = [_trainer(r)]
    if r["baseline"] not in (None, "none"):
        bf = _filters(r, "baseline_filters") if r.get("baseline_filters") else (
            r["filters"] if isinstance(r["filters"], str) and not r["filters"].startswith("{") else "desk")
        trainers.append(_trainer(r, r["baseline"], bf))
    reports = []
    for trainer in trainers:
        if scheme == "cv":
            k = int(r["k"])
            if k < 2 or k > len(corpus):
                raise UsageError(f"--k must be in 2..{len(corpus)}, got {k}")
            reports.append(run_cv(corpus, trainer, k, seed, jobs))
        else:
            ops = _int_list(r["augment_ops"])
            reports.append(run_loso(corpus, Augmenter(tuple(ops)), trainer, seed, jobs))
    if len(reports) > 1:
        reports[0].ttests[reports[1].method] = reports[0].compare(reports[1])
    out = Path(r.get("out") or _default_out("eval"))
    report_emit(reports, out)
    _write_run(out, "eval", r)
    s = reports[0].summary()
    log.info("%s %s: RMSE %.4f cm, distance %.3f +/- %.3f px, outliers %.2f%%", s["method"], scheme,
             s["overall_rmse_cm"], s["distance_mean_px"], s["distance_std_px"], s["outlier_rate_pct"])
    return EXIT_OK


def cmd_gradcheck(r: dict) -> int:
    from .verify import run_suite

    tol = float(r["tolerance"])
    worst = 0.0
    ok = True
    for name, rep in run_suite(int(r["seed"])):
        passed = rep.max_rel_error < tol and rep.passed
        worst = max(worst, rep.max_rel_error)
        ok &= passed
        print(f"{name:24s} max_rel_error={rep.max_rel_error:.3e} {'PASS' if passed else 'FAIL'}")
    print(f"overall max_rel_error={worst:.3e} tolerance={tol:.1e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "augment": cmd_augment, "train": cmd_train, "predict": cmd_predict,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    from .training import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = resolve(args)
        return COMMANDS[args.command](resolved)
    except UsageError as exc:
        print(f"vtlm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"vtlm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"vtlm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"vtlm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"vtlm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, AssertionError) as exc:
        print(f"vtlm {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
