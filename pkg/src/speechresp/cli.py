"""Command-line interface: synth, train, eval, saliency, predict.

Flags can come from a TOML file via --config; explicit flags win over
file values, file values win over built-in defaults. Exit codes: 0
success, 1 usage error, 2 data or I/O error, 3 numeric divergence
during training. All artifacts are written atomically.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .audio import load_wav
from .belt import RespirationTrace, load_belt_csv, preprocess_trace
from .corpus import (
    FeaturePlan,
    TARGET_FRAME_RATE_HZ,
    assemble_segments,
    emb_path_for,
    load_manifest,
    split_entries,
)
from .embeddings import align_frame_rate, load_embeddings, select_dims
from .errors import DivergenceError, FormatError, ParameterError, SpeechRespError
from .evaluation import (
    detect_breath_events,
    evaluate_segments,
    rr_from_events,
    save_metrics_json,
    save_segment_csv,
    save_trace_csv,
)
from .features import FeatureKind, FeatureMatrix, mfb
from .ioutil import atomic_write_json
from .model import BranchSpec, ModelConfig, forward
from .saliency import (
    load_selection,
    saliency_scores,
    save_report,
    save_selection,
    top_fraction,
)
from .synth import SynthConfig, synth_corpus
from .training import (
    TrainConfig,
    checkpoint_metadata,
    load_checkpoint,
    save_checkpoint,
    train,
)

SPEED_FACTORS = (0.9, 1.1)
FEATURE_CHOICES = {
    "mfb": FeatureKind.MFB,
    "emb": FeatureKind.EMBEDDING,
    "fused": FeatureKind.FUSED,
}


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class _Resolved:
    """Flag > config-file > default, per option."""

    def __init__(self, ns: argparse.Namespace):
        self.ns = ns
        self.file_cfg = {}
        if getattr(ns, "config", None):
            with open(ns.config, "rb") as fh:
                try:
                    self.file_cfg = tomllib.load(fh)
                except tomllib.TOMLDecodeError as exc:
                    raise FormatError(f"config file {ns.config}: {exc}") from exc

    def get(self, name, default):
        v = getattr(self.ns, name, None)
        if v is not None:
            return v
        if name in self.file_cfg:
            return self.file_cfg[name]
        return default


def _load_plan(ns) -> FeaturePlan:
    r = _Resolved(ns)
    kind_name = r.get("features", "mfb")
    if kind_name not in FEATURE_CHOICES:
        raise ParameterError(f"unknown feature kind {kind_name!r}")
    selection = None
    sel_path = r.get("selection", None)
    if sel_path is not None:
        selection = load_selection(sel_path)
    return FeaturePlan(
        kind=FEATURE_CHOICES[kind_name],
        emb_layer=int(r.get("emb_layer", 4)),
        selection=selection,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_synth(ns) -> None:
    r = _Resolved(ns)
    cfg = SynthConfig(
        n_utterances=int(r.get("n_utterances", 12)),
        utterance_s=float(r.get("utterance_s", 60.0)),
        rr_range_bpm=(float(r.get("rr_low", 5.0)), float(r.get("rr_high", 19.0))),
        inhale_noise_gain=float(r.get("inhale_noise_gain", 4.0)),
        speech_band_gain=float(r.get("speech_band_gain", 1.0)),
        seed=int(r.get("seed", 0)),
        utterances_per_speaker=int(r.get("utterances_per_speaker", 5)),
    )
    manifest = synth_corpus(cfg, r.get("out_dir", "."))
    print(manifest)


def cmd_train(ns) -> None:
    r = _Resolved(ns)
    out = Path(r.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    plan = _load_plan(ns)
    seg_s = float(r.get("seg_s", 30.0))
    entries = split_entries(load_manifest(ns.manifest))
    if not entries["train"] or not entries["val"]:
        raise ParameterError("manifest needs non-empty train and val splits")
    factors = SPEED_FACTORS if r.get("augment", False) else ()
    train_set = assemble_segments(entries["train"], plan, seg_s, factors)
    val_set = assemble_segments(entries["val"], plan, seg_s)
    seed = int(r.get("seed", 0))
    model_cfg = ModelConfig(
        branches=[
            BranchSpec(input_dims=f.dims, conv_width=int(r.get("conv_width", 5)))
            for f in train_set[0].features
        ],
        lstm_layers=int(r.get("lstm_layers", 2)),
        lstm_units=int(r.get("lstm_units", 128)),
        embed_units=int(r.get("embed_units", 128)),
        seed=seed,
    )
    train_cfg = TrainConfig(
        lr=float(r.get("lr", 0.005)),
        batch_size=int(r.get("batch_size", 64)),
        max_epochs=int(r.get("max_epochs", 100)),
        patience=int(r.get("patience", 5)),
        seed=seed,
    )
    params, history = train(
        model_cfg, train_cfg, train_set, val_set, log_path=out / "history.jsonl"
    )
    pipeline = plan.to_dict()
    pipeline["seg_s"] = seg_s
    pipeline["frame_rate_hz"] = TARGET_FRAME_RATE_HZ
    ckpt = out / "model.ckpt"
    save_checkpoint(params, model_cfg, ckpt, pipeline=pipeline)
    print(
        json.dumps(
            {
                "checkpoint": str(ckpt),
                "epochs": history.n_epochs,
                "best_epoch": history.best_epoch,
                "best_val_loss": history.val_loss[history.best_epoch - 1],
            },
            sort_keys=True,
        )
    )


def _plan_from_checkpoint(path) -> tuple[FeaturePlan, float]:
    meta = checkpoint_metadata(path)
    if "pipeline" not in meta:
        raise FormatError(
            f"checkpoint {path} carries no feature-pipeline metadata; "
            "it was not produced by the train command"
        )
    plan = FeaturePlan.from_dict(meta["pipeline"])
    seg_s = float(meta["pipeline"].get("seg_s", 30.0))
    return plan, seg_s


def cmd_eval(ns) -> None:
    r = _Resolved(ns)
    out = Path(r.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    params, _config = load_checkpoint(ns.checkpoint)
    plan, seg_s = _plan_from_checkpoint(ns.checkpoint)
    split = r.get("split", "test")
    entries = split_entries(load_manifest(ns.manifest))
    if split not in entries:
        raise ParameterError(f"unknown split {split!r}")
    if not entries[split]:
        raise ParameterError(f"manifest has no utterances in split {split!r}")
    dataset = assemble_segments(entries[split], plan, seg_s)
    report, scores = evaluate_segments(params, dataset)
    save_metrics_json(report, out / "metrics.json")
    save_segment_csv(scores, out / "segments.csv")
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_saliency(ns) -> None:
    r = _Resolved(ns)
    out = Path(r.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    emb_layer = int(r.get("emb_layer", 4))
    split = r.get("split", "train")
    entries = split_entries(load_manifest(ns.manifest))
    if not entries[split]:
        raise ParameterError(f"manifest has no utterances in split {split!r}")
    pairs = []
    for entry in entries[split]:
        path = emb_path_for(entry.audio_path, emb_layer)
        if not path.exists():
            raise FormatError(f"embedding file not found: {path}")
        emb, _ = load_embeddings(path)
        emb = align_frame_rate(emb, TARGET_FRAME_RATE_HZ)
        audio = load_wav(entry.audio_path)
        target = preprocess_trace(
            load_belt_csv(entry.belt_path), audio.duration_s, TARGET_FRAME_RATE_HZ
        )
        n = min(emb.n_frames, target.values.size)
        emb = FeatureMatrix(
            emb.data[:n].copy(), emb.frame_rate_hz, emb.kind, emb.dim_labels
        )
        pairs.append(
            (emb, RespirationTrace(target.values[:n].copy(), TARGET_FRAME_RATE_HZ))
        )
    report = saliency_scores(pairs)
    save_report(report, out / "saliency.json")
    fractions = [float(p) for p in str(r.get("fractions", "0.9,0.75,0.5,0.25")).split(",")]
    written = []
    for p in fractions:
        indices = top_fraction(report, p)
        path = out / f"selection_p{p:g}.json"
        save_selection(indices, path)
        written.append(str(path))
    print(json.dumps({"report": str(out / "saliency.json"), "selections": written}))


def cmd_predict(ns) -> None:
    r = _Resolved(ns)
    out = Path(r.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    params, _config = load_checkpoint(ns.checkpoint)
    plan, _seg_s = _plan_from_checkpoint(ns.checkpoint)
    wav = Path(ns.wav)
    audio = load_wav(wav)
    features: list[FeatureMatrix] = []
    if plan.kind in (FeatureKind.MFB, FeatureKind.FUSED):
        features.append(mfb(audio))
    if plan.kind in (FeatureKind.EMBEDDING, FeatureKind.FUSED):
        path = emb_path_for(wav, plan.emb_layer)
        if not path.exists():
            raise FormatError(
                f"checkpoint expects layer-{plan.emb_layer} embeddings, "
                f"but {path} does not exist"
            )
        emb, _ = load_embeddings(path)
        emb = align_frame_rate(emb, TARGET_FRAME_RATE_HZ)
        if plan.selection is not None:
            emb = select_dims(emb, plan.selection)
        features.append(emb)
    n = min(f.n_frames for f in features)
    features = [
        FeatureMatrix(f.data[:n].copy(), f.frame_rate_hz, f.kind, f.dim_labels)
        for f in features
    ]
    estimate = forward(params, features)
    events = detect_breath_events(estimate)
    result = {
        "rr_bpm": rr_from_events(events),
        "inhale_times_s": [float(t) for t in events.inhale_times_s],
    }
    save_trace_csv(out / f"{wav.stem}.trace.csv", estimate)
    atomic_write_json(out / f"{wav.stem}.events.json", result)
    print(json.dumps(result, sort_keys=True))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="speechresp",
        description="Respiration and respiratory-rate estimation from speech.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("--seed", type=int, help="RNG seed where randomness exists")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n-utterances", dest="n_utterances", type=int)
    p.add_argument("--utterance-s", dest="utterance_s", type=float)
    p.add_argument("--rr-low", dest="rr_low", type=float)
    p.add_argument("--rr-high", dest="rr_high", type=float)
    p.add_argument("--inhale-noise-gain", dest="inhale_noise_gain", type=float)
    p.add_argument("--speech-band-gain", dest="speech_band_gain", type=float)
    p.add_argument("--utterances-per-speaker", dest="utterances_per_speaker", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", choices=sorted(FEATURE_CHOICES))
    p.add_argument("--emb-layer", dest="emb_layer", type=int)
    p.add_argument("--selection", help="JSON file of embedding dims to keep")
    p.add_argument("--seg-s", dest="seg_s", type=float)
    p.add_argument("--augment", action="store_const", const=True, default=None,
                   help="add speed-perturbed training copies (x0.9, x1.1)")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--conv-width", dest="conv_width", type=int)
    p.add_argument("--lstm-layers", dest="lstm_layers", type=int)
    p.add_argument("--lstm-units", dest="lstm_units", type=int)
    p.add_argument("--embed-units", dest="embed_units", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("saliency", help="score embedding dims and write selections")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--emb-layer", dest="emb_layer", type=int)
    p.add_argument("--fractions", help="comma-separated keep fractions")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("predict", help="estimate respiration for one WAV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        ns.func(ns)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SpeechRespError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
