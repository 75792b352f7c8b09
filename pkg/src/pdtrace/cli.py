"""Command-line entry point: ``pdtrace {synth,preprocess,train,eval,predict,gradcheck}``."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as sd
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
    PdtraceError,
    ShapeError,
)
from .metrics import compute_metrics, confusion, evaluate, majority_vote
from .model import ModelConfig, model_gradient_check, predict_proba
from .nn.gradcheck import LAYER_KINDS, TOLERANCES, layer_gradient_check
from .preprocess import (
    FEATURES,
    build_patch_set,
    features,
    prepare_training_patches,
    save_patch_set,
)
from .synth import SynthConfig, generate_corpus
from .train import (
    TrainConfig,
    aggregate_histories,
    load_checkpoint,
    save_checkpoint,
    split_indices,
    train_model,
)

log = logging.getLogger("pdtrace")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name not in ("window", "n_features")]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "seed"]

DEFAULT_CONFIG = {
    "seed": 0,
    "runs": 1,
    "preprocess": {"window": 128, "stride": 8, "channels": ["vx", "vy"]},
    "model": {k: getattr(ModelConfig(), k) for k in _MODEL_KEYS},
    "train": {k: getattr(TrainConfig(), k) for k in _TRAIN_KEYS},
    "eval": {"stride": None},
    "synth": {"n_hc": 29, "n_pd": 20, "format": "jsonl", **SynthConfig().to_dict()},
}


class StageError(PdtraceError):
    def __init__(self, stage, exc):
        self.stage, self.cause = stage, exc
        super().__init__(f"[{stage}] {exc}")


def _coerce(value, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, list):
        return [v.strip() for v in value.split(",") if v.strip()]
    if like is None:
        return None if value.lower() in ("none", "null", "") else int(value)
    return value


def resolve_config(args):
    """Merge defaults, the optional JSON config file and command-line overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        for key, value in user.items():
            if key not in cfg:
                raise ConfigError(f"unknown config section {key!r}")
            if isinstance(cfg[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be an object")
                unknown = set(value) - set(cfg[key])
                if unknown:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
                cfg[key].update(value)
            else:
                cfg[key] = value
    for assignment in getattr(args, "set", None) or []:
        key, sep, value = assignment.partition("=")
        section, _, name = key.partition(".")
        if not sep or section not in cfg or not isinstance(cfg[section], dict) or name not in cfg[section]:
            raise ConfigError(f"bad override {assignment!r}; use section.key=value")
        cfg[section][name] = _coerce(value, cfg[section][name])
    direct = {
        "seed": ("seed", None), "runs": ("runs", None),
        "window": ("preprocess", "window"), "stride": ("preprocess", "stride"),
        "channels": ("preprocess", "channels"), "eval_stride": ("eval", "stride"),
        "epochs": ("train", "epochs"),
    }
    for attr, (section, name) in direct.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if attr == "channels":
            value = [c.strip() for c in value.split(",") if c.strip()]
        if name is None:
            cfg[section] = value
        else:
            cfg[section][name] = value
    bad = [c for c in cfg["preprocess"]["channels"] if c not in FEATURES]
    if bad or not cfg["preprocess"]["channels"]:
        raise ConfigError(f"unknown channels {bad}; choose from {list(FEATURES)}")
    if cfg["runs"] < 1:
        raise ConfigError("--runs must be >= 1")
    return cfg


def model_config(cfg):
    try:
        mc = ModelConfig(
            window=cfg["preprocess"]["window"],
            n_features=len(cfg["preprocess"]["channels"]),
            **cfg["model"],
        )
        mc.shape_chain()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return mc


def train_config(cfg, seed):
    return TrainConfig(seed=seed, **cfg["train"])


def synth_config(cfg):
    return SynthConfig(**{k: v for k, v in cfg["synth"].items() if k not in ("n_hc", "n_pd", "format")})


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("output", exc) from exc
    return out


def load_split(path, split):
    """Sequences for ``split`` from a file, ``<dir>/<split>.jsonl``, ``<dir>/<split>/`` or ``<dir>``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data path {path} does not exist")
    if path.is_dir():
        if (path / f"{split}.jsonl").is_file():
            path = path / f"{split}.jsonl"
        elif (path / split).is_dir():
            path = path / split
    seqs = sd.read_sequences(path)
    if not seqs:
        raise DataError(f"found 0 sequences in {path}")
    return seqs


def _validated(seqs, min_len):
    for s in seqs:
        report = sd.validate_sequence(s, min_len)
        if not report.usable:
            raise DataError(f"sequence {s.sequence_id} unusable: {report.issues[:5]}")
    return seqs


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg, args):
    out = _out_dir(args)
    try:
        train, test = generate_corpus(cfg["synth"]["n_hc"], cfg["synth"]["n_pd"], synth_config(cfg), cfg["seed"])
    except PdtraceError as exc:
        raise StageError("synth", exc) from exc
    fmt = cfg["synth"]["format"]
    for name, seqs in (("train", train), ("test", test)):
        target = out / (f"{name}.jsonl" if fmt == "jsonl" else name)
        sd.write_sequences(seqs, target, fmt)
    manifest = {
        split: [{"sequence_id": s.sequence_id, "subject_id": s.subject_id, "label": s.label,
                 "length": len(s)} for s in seqs]
        for split, seqs in (("train", train), ("test", test))
    }
    manifest["subjects"] = {
        split: sorted({s.subject_id for s in seqs}) for split, seqs in (("train", train), ("test", test))
    }
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "resolved-config.json", cfg)
    print(f"wrote {len(train)} train and {len(test)} test sequences "
          f"({len(manifest['subjects']['train']) + len(manifest['subjects']['test'])} subjects) to {out}")
    return EXIT_OK


def _training_patches(cfg, data_path):
    pp = cfg["preprocess"]
    try:
        seqs = _validated(load_split(data_path, "train"), pp["window"] + 1)
    except PdtraceError as exc:
        raise StageError("load", exc) from exc
    try:
        return prepare_training_patches(seqs, pp["window"], pp["stride"], tuple(pp["channels"]))
    except PdtraceError as exc:
        raise StageError("preprocess", exc) from exc


def cmd_preprocess(cfg, args):
    out = _out_dir(args)
    ps = _training_patches(cfg, args.data)
    save_patch_set(ps, out)
    _write_json(out / "resolved-config.json", cfg)
    counts = np.bincount(ps.y, minlength=2)
    print(f"wrote {len(ps)} patches (HC {counts[0]}, PD {counts[1]}) to {out}")
    return EXIT_OK


def _train_one(cfg, ps, seed, out):
    mc = model_config(cfg)
    tc = train_config(cfg, seed)
    try:
        tr, va = split_indices(len(ps), tc.val_fraction, seed)
    except PdtraceError as exc:
        raise StageError("split", exc) from exc
    try:
        ckpt, history = train_model(ps.X[tr], ps.y[tr], tc, mc, ps.X[va], ps.y[va])
    except PdtraceError as exc:
        raise StageError("train", exc) from exc
    out.mkdir(parents=True, exist_ok=True)
    ckpt.metadata["channels"] = list(cfg["preprocess"]["channels"])
    save_checkpoint(ckpt, out / "checkpoint.json")
    history.to_csv(out / "history.csv")
    pred = np.argmax(predict_proba(ckpt.params, ps.X[va]), axis=1)
    report = compute_metrics(confusion(pred, ps.y[va]), "P")
    _write_json(out / "metrics.json", {
        "best_epoch": ckpt.metadata["epoch"],
        "val_acc": ckpt.metadata["val_acc"],
        "val_loss": ckpt.metadata["val_loss"],
        "validation": report.to_dict(),
        "n_train": int(len(tr)),
        "n_val": int(len(va)),
    })
    return history


def cmd_train(cfg, args):
    out = _out_dir(args)
    model_config(cfg)
    ps = _training_patches(cfg, args.data)
    _write_json(out / "resolved-config.json", cfg)
    runs = cfg["runs"]
    if runs == 1:
        history = _train_one(cfg, ps, cfg["seed"], out)
        last = history.rows[-1] if history.rows else {}
        print(f"trained {len(history)} epochs; final val_acc {last.get('val_acc', float('nan')):.4f}")
        return EXIT_OK
    histories = []
    for i in range(runs):
        histories.append(_train_one(cfg, ps, cfg["seed"] + i, out / f"run_{i:02d}"))
        log.info("run %d/%d done", i + 1, runs)
    if all(len(h) for h in histories):
        aggregate_histories(histories, out / "history_aggregate.csv")
    print(f"trained {runs} runs into {out}")
    return EXIT_OK


def _load_ckpt(path, cfg, args):
    try:
        ckpt = load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise StageError("checkpoint", exc) from exc
    c = ckpt.params.config
    window = cfg["preprocess"]["window"]
    explicit_window = getattr(args, "window", None) is not None or (
        window != DEFAULT_CONFIG["preprocess"]["window"]
    )
    if explicit_window and window != c.window:
        raise ConfigError(f"checkpoint window {c.window} != configured window {window}")
    channels = ckpt.metadata.get("channels") or cfg["preprocess"]["channels"]
    if len(channels) != c.n_features:
        raise ConfigError(f"checkpoint expects {c.n_features} channels, config gives {channels}")
    return ckpt, tuple(channels)


def cmd_eval(cfg, args):
    out = _out_dir(args)
    ckpt, channels = _load_ckpt(args.checkpoint, cfg, args)
    w = ckpt.params.config.window
    try:
        seqs = _validated(load_split(args.data, "test"), 2)
    except PdtraceError as exc:
        raise StageError("load", exc) from exc
    try:
        result = evaluate(ckpt, seqs, w, cfg["eval"]["stride"], channels)
    except PdtraceError as exc:
        raise StageError("eval", exc) from exc
    (out / "metrics.json").write_text(result.to_json() + "\n")
    (out / "metrics.txt").write_text(result.to_table())
    _write_json(out / "resolved-config.json", cfg)
    sys.stdout.write(result.to_table())
    return EXIT_OK


def cmd_predict(cfg, args):
    ckpt, channels = _load_ckpt(args.checkpoint, cfg, args)
    w = ckpt.params.config.window
    try:
        seqs = sd.read_sequences(args.sequence)
    except PdtraceError as exc:
        raise StageError("load", exc) from exc
    if len(seqs) != 1:
        raise StageError("load", DataError(f"expected one sequence in {args.sequence}, found {len(seqs)}"))
    seq = seqs[0]
    if len(seq) < w + 1:
        raise StageError("preprocess", DataError(
            f"sequence has {len(seq)} samples; at least {w + 1} needed for one window of {w}"))
    _validated([seq], w + 1)
    stride = cfg["eval"]["stride"] or max(1, w // 2)
    series = features(seq, channels)
    ps = build_patch_set([series], w, [stride], channels)
    proba = predict_proba(ckpt.params, ps.X)
    votes = np.argmax(proba, axis=1)
    verdict = sd.LABELS[majority_vote(votes, proba[:, sd.PD])]
    print(json.dumps({
        "sequence_id": seq.sequence_id,
        "patch_votes": {"HC": int(np.sum(votes == sd.HC)), "PD": int(np.sum(votes == sd.PD))},
        "patch_p_pd": [float(p) for p in proba[:, sd.PD]],
        "mean_p_pd": float(proba[:, sd.PD].mean()),
        "verdict": verdict,
    }))
    return EXIT_OK


def cmd_gradcheck(cfg, args):
    fault = 0.1 if args.inject_fault else 0.0
    rows = []
    kinds = LAYER_KINDS if args.scope == "layer" else ("model",)
    for kind in kinds:
        if kind == "model":
            errs = [model_gradient_check(args.seed + s, fault=fault) for s in range(args.seeds)]
        else:
            errs = [layer_gradient_check(kind, args.seed + s, fault=fault) for s in range(args.seeds)]
        rows.append((kind, max(errs), TOLERANCES[kind]))
    print(f"{'component':<12} {'max rel err':>12} {'tolerance':>10}  status")
    for kind, err, tol in rows:
        print(f"{kind:<12} {err:>12.3e} {tol:>10.0e}  {'ok' if err < tol else 'FAIL'}")
    return EXIT_OK if all(err < tol for _, err, tol in rows) else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="pdtrace", description="LSTM-CNN classification of pen drawing traces (HC vs PD).")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--window", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--channels", help="comma-separated feature channels, e.g. vx,vy")
    common.add_argument("--eval-stride", type=int, dest="eval_stride")
    common.add_argument("--epochs", type=int)
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="write balanced training patches")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train and keep the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="patch and sequence metrics on test data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="classify one sequence file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("sequence")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--scope", choices=("layer", "model"), default="layer")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "gradcheck" and args.seed is None:
            args.seed = cfg["seed"]
        return args.func(cfg, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc.cause)
    except PdtraceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def _exit_code(exc):
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ShapeError)):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (CheckpointError, OSError)):
        return EXIT_IO
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
