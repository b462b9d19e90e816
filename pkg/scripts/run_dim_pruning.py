"""Saliency-guided dimension pruning sweep on embedding inputs.

Synthesizes a small corpus, plants a respiration-correlated column in
otherwise-noise embeddings, scores dimensions on the training split, then
retrains at shrinking keep-fractions. The point of the table: accuracy
should survive pruning as long as the salient dimensions stay in.

    python3 scripts/run_dim_pruning.py --work-dir /tmp/prune_run
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from speechresp.belt import RespirationTrace, load_belt_csv, preprocess_trace
from speechresp.corpus import (
    FeaturePlan,
    assemble_segments,
    build_utterance,
    emb_path_for,
    load_manifest,
    split_entries,
)
from speechresp.embeddings import save_embeddings
from speechresp.evaluation import evaluate
from speechresp.features import FeatureKind
from speechresp.model import BranchSpec, ModelConfig, param_count
from speechresp.saliency import saliency_scores, save_report, top_fraction
from speechresp.synth import SynthConfig, synth_corpus, synth_embeddings
from speechresp.training import TrainConfig, train

EMB_DIMS = 16
EMB_LAYER = 4
FRACTIONS = (1.0, 0.9, 0.75, 0.5, 0.25)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", type=Path, required=True)
    ap.add_argument("--n-utterances", type=int, default=18)
    ap.add_argument("--utterance-s", type=float, default=35.0)
    ap.add_argument("--utterances-per-speaker", type=int, default=3)
    ap.add_argument("--max-epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=11)
    return ap.parse_args()


def plant_embeddings(entries, seed):
    """Write one .emb per utterance: noise columns plus a planted signal."""
    for i, entry in enumerate(entries):
        belt = load_belt_csv(entry.belt_path)
        trace = preprocess_trace(belt, float(belt.timestamps_s[-1]), 100.0)
        half = RespirationTrace(trace.values[::2].copy(), 50.0)
        emb = synth_embeddings(
            half, EMB_DIMS, signal_dim=3, noise_scale=0.3, seed=seed + i
        )
        save_embeddings(emb, emb_path_for(entry.audio_path, EMB_LAYER), layer=EMB_LAYER)


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
    entries = load_manifest(manifest)
    plant_embeddings(entries, args.seed)
    splits = split_entries(entries)

    base_plan = FeaturePlan(FeatureKind.EMBEDDING, emb_layer=EMB_LAYER)
    pairs = []
    for entry in splits["train"]:
        feats, target = build_utterance(entry, base_plan)
        pairs.append((feats[0], target))
    report = saliency_scores(pairs)
    save_report(report, args.work_dir / "saliency.json")
    order = np.argsort(report.scores)[::-1]
    print("dims by saliency:", [int(i) for i in order])

    print(f"{'frac':>5} {'dims':>5} {'params':>8} {'ccc':>6} {'mae':>6} {'acc%':>6}")
    for frac in FRACTIONS:
        selection = None if frac == 1.0 else top_fraction(report, frac)
        kept = EMB_DIMS if selection is None else len(selection)
        plan = FeaturePlan(FeatureKind.EMBEDDING, emb_layer=EMB_LAYER, selection=selection)
        train_set = assemble_segments(splits["train"], plan, seg_s=30.0)
        val_set = assemble_segments(splits["val"], plan, seg_s=30.0)
        test_set = assemble_segments(splits["test"], plan, seg_s=30.0)
        model_cfg = ModelConfig(
            branches=[BranchSpec(kept, conv_width=3)],
            lstm_layers=1,
            lstm_units=32,
            embed_units=32,
        )
        train_cfg = TrainConfig(batch_size=16, max_epochs=args.max_epochs)
        params, _ = train(model_cfg, train_cfg, train_set, val_set)
        rep = evaluate(params, test_set)
        print(
            f"{frac:5.2f} {kept:5d} {param_count(model_cfg):8d} "
            f"{rep.ccc:6.3f} {rep.mae_bpm:6.2f} {rep.acc_at_2bpm_pct:6.1f}"
        )
    print(f"total {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
