"""Respiration time-series and respiratory-rate estimation from speech.

The pipeline: load audio and chest-belt recordings (or generate a
synthetic corpus), turn audio into filterbank features and/or precomputed
foundation-model embeddings, train a Conv-LSTM regressor against the
compressed belt trace with a concordance objective, then evaluate frame
agreement, rate accuracy and breath-event alignment. A saliency module
scores embedding dimensions so models can shrink without retraining the
upstream feature extractor.
"""

from .audio import AudioBuffer, load_wav, save_wav, speed_augment
from .belt import (
    BeltTrace,
    RespirationTrace,
    load_belt_csv,
    preprocess_trace,
    save_belt_csv,
)
from .embeddings import align_frame_rate, load_embeddings, save_embeddings, select_dims
from .errors import (
    AlignmentError,
    CoverageError,
    DegenerateSignalError,
    DivergenceError,
    FormatError,
    ParameterError,
    SpeechRespError,
    TruncationError,
    UndefinedMetricError,
    UnsupportedFormatError,
)
from .evaluation import (
    BreathEvents,
    MetricsReport,
    ber,
    detect_breath_events,
    evaluate,
    evaluate_segments,
    match_events,
    rr_from_events,
)
from .features import FeatureKind, FeatureMatrix, mfb
from .model import (
    BranchSpec,
    CccStats,
    ModelConfig,
    ModelParams,
    ccc,
    ccc_stats,
    forward,
    init_params,
    loss_and_grad,
    param_count,
)
from .saliency import SaliencyReport, saliency_scores, top_fraction
from .segments import Segment, make_segments
from .synth import SynthConfig, synth_corpus, synth_embeddings, synth_utterance
from .training import (
    TrainConfig,
    TrainHistory,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
