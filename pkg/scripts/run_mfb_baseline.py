"""End-to-end baseline: synthesize a corpus, train the filterbank model,
report trace and rate metrics on the held-out speakers.

    python3 scripts/run_mfb_baseline.py --work-dir /tmp/mfb_run
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from speechresp.corpus import FeaturePlan, assemble_segments, load_manifest, split_entries
from speechresp.evaluation import evaluate_segments, save_metrics_json, save_segment_csv
from speechresp.features import FeatureKind
from speechresp.model import BranchSpec, ModelConfig
from speechresp.synth import SynthConfig, synth_corpus
from speechresp.training import TrainConfig, save_checkpoint, train


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", type=Path, required=True)
    ap.add_argument("--n-utterances", type=int, default=110)
    ap.add_argument("--utterances-per-speaker", type=int, default=5)
    ap.add_argument("--utterance-s", type=float, default=61.0)
    ap.add_argument("--seg-s", type=float, default=30.0)
    ap.add_argument("--max-epochs", type=int, default=15)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=7)
    return ap.parse_args()


def main():
    args = parse_args()
    args.work_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    cfg = SynthConfig(
        n_utterances=args.n_utterances,
        utterance_s=args.utterance_s,
        utterances_per_speaker=args.utterances_per_speaker,
        seed=args.seed,
    )
    manifest = synth_corpus(cfg, args.work_dir / "corpus")
    print(f"corpus: {manifest}  ({time.perf_counter() - t0:.1f} s)")

    plan = FeaturePlan(FeatureKind.MFB)
    entries = split_entries(load_manifest(manifest))
    sets = {
        name: assemble_segments(entries[name], plan, seg_s=args.seg_s)
        for name in ("train", "val", "test")
    }
    print("segments:", {k: len(v) for k, v in sets.items()})

    model_cfg = ModelConfig(branches=[BranchSpec(40)])
    train_cfg = TrainConfig(
        lr=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs
    )
    params, history = train(
        model_cfg,
        train_cfg,
        sets["train"],
        sets["val"],
        log_path=args.work_dir / "history.jsonl",
    )
    for ep, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss), start=1):
        print(f"epoch {ep:3d}  train {tl:.4f}  val {vl:.4f}")
    print(f"best epoch: {history.best_epoch}")

    pipeline = plan.to_dict()
    pipeline["seg_s"] = args.seg_s
    pipeline["frame_rate_hz"] = 100.0
    save_checkpoint(params, model_cfg, args.work_dir / "model.ckpt", pipeline=pipeline)
    report, rows = evaluate_segments(params, sets["test"])
    save_metrics_json(report, args.work_dir / "metrics.json")
    save_segment_csv(rows, args.work_dir / "segments.csv")
    print(json.dumps(report.to_dict(), indent=2))
    print(f"total {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
