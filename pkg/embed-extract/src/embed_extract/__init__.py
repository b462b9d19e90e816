"""Offline embedding extraction for the speechresp pipeline.

Runs a locally stored pretrained speech encoder over corpus audio and
writes one `.emb` file per (utterance, layer). The downstream trainer
only ever sees the files, never this package.
"""

from embed_extract.extract import (
    EMB_MAGIC,
    ExtractError,
    ExtractJob,
    SetupError,
    extract,
    save_emb,
)

__all__ = [
    "EMB_MAGIC",
    "ExtractError",
    "ExtractJob",
    "SetupError",
    "extract",
    "save_emb",
]
