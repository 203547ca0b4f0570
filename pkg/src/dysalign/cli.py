"""``dysalign`` command line: simulate, train, align, evaluate, report.

Exit codes: 0 success, 2 usage, 3 missing input, 4 malformed config,
5 incompatible shapes or matrix files, 6 other data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .align.lcs import export_alignment_csv
from .config import ConfigError, RunConfig, resolve_config
from .core import (DEFAULT_ALPHABET, DysfluencyError, MatrixFormatError, ShapeError, TimedTokenSequence,
                   read_annotations, serialize_annotations)
from .detect import Detector, DetectorConfig, DurationPrior
from .grad import LearningRateSchedule
from .metrics import corpus_detection_scores, dper, scaling_factors
from .model import AlignerModel
from .report import extraction_output, render_report
from .simulate import SimulationConfig, corpus_generate, load_utterance
from .train import TrainExample, train

log = logging.getLogger("dysalign")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_SHAPE, EXIT_DATA = 0, 2, 3, 4, 5, 6


class MissingInputError(DysfluencyError, FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# corpus access


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input: {path}")
    return path


def _read_manifest(directory: Path) -> dict:
    path = _require(directory / "manifest.json")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DysfluencyError(f"{path}: {exc}") from exc


def _tokens_to_timed(items) -> TimedTokenSequence:
    return TimedTokenSequence.from_seconds((DEFAULT_ALPHABET.lookup(t["phoneme"]), t["start"], t["end"])
                                           for t in items)


def load_bundle(directory: Path, entry: dict) -> dict:
    """One simulated utterance with everything the aligner and detector need."""
    for name in entry["files"].values():
        _require(directory / name)
    raw = load_utterance(directory, entry)
    tok = raw["tokens"]
    return {
        "id": entry["id"],
        "features": raw["features"],
        "words": tok["words"],
        "text": tok["text"],
        "ref_ids": DEFAULT_ALPHABET.encode(tok["reference"]),
        "ref_words": tok["reference_words"],
        "spoken": _tokens_to_timed(tok["tokens"]),
        "annotations": raw["annotations"],
    }


def _load_corpus(directory: Path) -> list[dict]:
    manifest = _read_manifest(directory)
    return [load_bundle(directory, e) for e in manifest["utterances"]]


def _check_dim(bundles: Sequence[dict], dim: int) -> None:
    for b in bundles:
        if b["features"].shape[0] != dim:
            raise ShapeError(f"{b['id']}: features have {b['features'].shape[0]} rows, token_dim is {dim}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _path(arg: Optional[str], cfg: RunConfig, key: str, flag: str) -> Path:
    value = arg or cfg.paths.get(key)
    if value is None:
        raise ConfigError(f"no path given (use {flag} or paths.{key})", f"paths.{key}")
    return Path(value)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg: RunConfig) -> int:
    src = _require(_path(args.inp, cfg, "texts", "--in"))
    texts = [line.strip() for line in src.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not texts:
        raise DysfluencyError(f"{src}: no texts")
    sim = SimulationConfig(mode=args.mode or cfg.sim_mode, multi_fraction=cfg.multi_fraction,
                           feature_dim=cfg.token_dim, voice_seed=cfg.voice_seed, seed=cfg.seed)
    out = _path(args.out, cfg, "corpus", "--out")
    manifest = corpus_generate(texts, sim, out, n=args.n, jobs=cfg.jobs)
    print(f"wrote {manifest['n_utterances']} utterances to {out} "
          f"(mean {manifest['mean_events']:.2f} events per utterance)")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    corpus = _path(args.inp, cfg, "corpus", "--in")
    bundles = _load_corpus(corpus)
    _check_dim(bundles, cfg.token_dim)
    examples = [TrainExample(b["features"].T.copy(), tuple(b["ref_ids"]), tuple(b["spoken"].symbols))
                for b in bundles]
    model = AlignerModel(np.random.default_rng(cfg.seed), dim=cfg.token_dim)
    steps = cfg.train_steps if args.steps is None else args.steps
    result = train(model, examples, steps=steps, batch=cfg.batch_size,
                   schedule=LearningRateSchedule(cfg.learning_rate, cfg.lr_decay, cfg.decay_every),
                   w_pre=cfg.loss_weights["pre"], w_post=cfg.loss_weights["post"], seed=cfg.seed)
    out = _path(args.out, cfg, "model", "--out")
    model.save(out / "parameters")
    prior = DurationPrior.fit([b["spoken"] for b in bundles])
    _write_json(out / "durations.json", {"default": prior.default,
                                         "median": {DEFAULT_ALPHABET.label(k): v for k, v in sorted(prior.median.items())}})
    _write_json(out / "train.json", {"config": cfg.to_dict(), "steps": steps, "initial_objective": result.initial,
                                     "final_objective": result.final, "losses": result.losses})
    print(f"objective {result.initial:.4f} -> {result.final:.4f} after {steps} steps; saved {out}")
    return EXIT_OK


def load_detector(model_dir: Path, cfg: RunConfig) -> Detector:
    model = AlignerModel(np.random.default_rng(0), dim=cfg.token_dim)
    model.load(_require(model_dir / "parameters"))
    dur = json.loads(_require(model_dir / "durations.json").read_text(encoding="utf-8"))
    prior = DurationPrior({DEFAULT_ALPHABET.lookup(k): v for k, v in dur["median"].items()}, dur["default"])
    det_cfg = DetectorConfig(threshold=cfg.alignment_threshold, prolongation_ratio=cfg.prolongation_ratio)
    return Detector(model, prior, det_cfg)


def cmd_align(args, cfg: RunConfig) -> int:
    corpus = _path(args.inp, cfg, "corpus", "--in")
    detector = load_detector(_path(args.model, cfg, "model", "--model"), cfg)
    out = _path(args.out, cfg, "predictions", "--out")
    out.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(corpus)

    def one(entry: dict) -> dict:
        b = load_bundle(corpus, entry)
        _check_dim([b], cfg.token_dim)
        det = detector.detect(b["features"].T, b["ref_ids"], b["ref_words"], b["words"])
        uid = b["id"]
        files = {"annotations": f"{uid}.json", "tokens": f"{uid}.tokens.json", "alignment": f"{uid}.align.csv"}
        (out / files["annotations"]).write_text(serialize_annotations(det.annotations) + "\n", encoding="utf-8")
        phones = [{"phoneme": DEFAULT_ALPHABET.label(t.symbol), "start": round(t.start_s, 2),
                   "end": round(t.end_s, 2)} for t in det.phones()]
        (out / files["tokens"]).write_text(json.dumps({"text": b["text"], "words": b["words"], "tokens": phones},
                                                      indent=1) + "\n", encoding="utf-8")
        export_alignment_csv(out / files["alignment"], det.alignment(len(b["ref_ids"])))
        return {"id": uid, "text": b["text"], "n_events": len(det.annotations), "files": files}

    with ThreadPoolExecutor(cfg.jobs) as pool:
        entries = list(pool.map(one, manifest["utterances"]))
    _write_json(out / "manifest.json", {"utterances": entries})
    print(f"aligned {len(entries)} utterances into {out}")
    return EXIT_OK


def _split_value(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        path = _require(Path(text))
        return float(json.loads(path.read_text(encoding="utf-8"))["matching_score"])


def evaluate_dirs(pred_dir: Path, gt_dir: Path) -> dict:
    """Detection scores and mean dPER of predictions against a simulated corpus."""
    gt_manifest = _read_manifest(gt_dir)
    _read_manifest(pred_dir)
    preds, gts, dpers = [], [], []
    for entry in gt_manifest["utterances"]:
        uid = entry["id"]
        gt = load_bundle(gt_dir, entry)
        pred_ann = read_annotations(_require(pred_dir / f"{uid}.json"))
        pred_tok = json.loads(_require(pred_dir / f"{uid}.tokens.json").read_text(encoding="utf-8"))
        preds.append([a.canonical() for a in pred_ann])
        gts.append([a.canonical() for a in gt["annotations"]])
        dpers.append(dper(gt["spoken"], _tokens_to_timed(pred_tok["tokens"])))
    scores = corpus_detection_scores(preds, gts)
    finite = [d for d in dpers if np.isfinite(d)]
    scores["dper"] = float(np.mean(finite)) if finite else float("inf")
    scores["n_utterances"] = len(gts)
    return scores


def cmd_evaluate(args, cfg: RunConfig) -> int:
    gt_dir = _path(args.inp, cfg, "corpus", "--in")
    pred_dir = _path(args.pred, cfg, "predictions", "--pred")
    report = evaluate_dirs(pred_dir, gt_dir)
    if args.splits:
        values = [_split_value(s) for s in args.splits]
        report["splits"] = values
        report["scaling_factor"] = scaling_factors(values)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _write_json(Path(args.out), report)
    print(text)
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    src = _path(args.inp, cfg, "predictions", "--in")
    out = _path(args.out, cfg, "reports", "--out")
    out.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(src)
    for entry in manifest["utterances"]:
        uid = entry["id"]
        annotations = read_annotations(_require(src / f"{uid}.json"))
        tokens = json.loads(_require(src / f"{uid}.tokens.json").read_text(encoding="utf-8"))
        body = render_report(annotations, tokens["words"]) + "\n\n" + extraction_output(annotations) + "\n"
        (out / f"{uid}.report.txt").write_text(body, encoding="utf-8")
    print(f"wrote {len(manifest['utterances'])} reports to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (default: $DYSALIGN_CONFIG)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, help="worker threads for per-utterance work")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dysalign", description="Dysfluency simulation, alignment and scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic dysfluent corpus")
    p.add_argument("--in", dest="inp", help="text file, one utterance per line")
    p.add_argument("--out", help="corpus directory")
    p.add_argument("--mode", choices=["single", "multi", "mixed", "fluent"])
    p.add_argument("--n", type=int, help="number of utterances (default: one per line)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train the aligner on a corpus")
    p.add_argument("--in", dest="inp", help="corpus directory")
    p.add_argument("--out", help="model directory")
    p.add_argument("--steps", type=int, help="override train_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", parents=[common], help="align and detect dysfluencies")
    p.add_argument("--in", dest="inp", help="corpus directory")
    p.add_argument("--model", help="model directory")
    p.add_argument("--out", help="prediction directory")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against a corpus")
    p.add_argument("--in", dest="inp", help="reference corpus directory")
    p.add_argument("--pred", help="prediction directory")
    p.add_argument("--out", help="metrics JSON path")
    p.add_argument("--splits", nargs=3, metavar="RESULT",
                   help="results at 30%%, 60%% and 100%% of the data (numbers or metrics JSON files)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="render text reports from predictions")
    p.add_argument("--in", dest="inp", help="prediction directory")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("jobs", args.jobs)) if v is not None}
        if overrides:
            cfg = cfg.replace(**overrides)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        name = exc.filename if getattr(exc, "filename", None) else exc
        print(f"missing input: {name}" if not isinstance(exc, MissingInputError) else str(exc), file=sys.stderr)
        return EXIT_MISSING
    except (ShapeError, MatrixFormatError) as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (DysfluencyError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
