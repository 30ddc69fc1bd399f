from .dataset import (
    Batch,
    CaptionDataset,
    CaptionedClip,
    Example,
    StreamConfig,
    n_stream_batches,
    pad_batch,
    read_manifest,
    stream_batches,
    write_manifest,
)
from .features import extract_logmel, load_features, mel_filterbank, save_features
from .synth import SynthConfig, synthesize, write_synthetic
from .vocab import (
    EOS,
    PAD,
    RESERVED,
    SOS,
    UNK,
    EncodeStats,
    VocabIntersection,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_caption,
    intersect_vocabulary,
    normalize,
)

__all__ = [
    "Batch", "CaptionDataset", "CaptionedClip", "EOS", "EncodeStats", "Example", "PAD", "RESERVED",
    "SOS", "StreamConfig", "SynthConfig", "UNK", "VocabIntersection", "Vocabulary",
    "build_vocabulary", "decode_tokens", "encode_caption", "extract_logmel", "intersect_vocabulary",
    "load_features", "mel_filterbank", "n_stream_batches", "normalize", "pad_batch", "read_manifest",
    "save_features", "stream_batches", "synthesize", "write_manifest", "write_synthetic",
]
