import json
import wave

import numpy as np
import pytest


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """Randomly initialized encoder with the production embedding width.

    Tests never download weights; the contract under test is shapes,
    rates, and bytes, none of which depend on what the weights are.
    """
    import torch
    from transformers import Wav2Vec2Config, Wav2Vec2Model

    torch.manual_seed(0)
    config = Wav2Vec2Config(
        hidden_size=768,
        num_hidden_layers=8,
        num_attention_heads=8,
        intermediate_size=1024,
    )
    path = tmp_path_factory.mktemp("model")
    Wav2Vec2Model(config).save_pretrained(path)
    return path


def make_wav(path, seconds, seed=0, sample_rate=16000):
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    samples = (rng.uniform(-0.3, 0.3, n) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(samples.tobytes())
    return path


def make_manifest(dir_path, wav_names):
    manifest = dir_path / "manifest.jsonl"
    lines = [json.dumps({"audio_path": name, "split": "train"}) for name in wav_names]
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
