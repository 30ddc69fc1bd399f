"""Captioned clips, CSV manifests, batching and the single-pass stream."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import DataError, FormatError
from .features import load_features, save_features
from .vocab import PAD, EncodeStats, Vocabulary, encode_caption

MANIFEST_HEADER = ["clip_id", "feature_file", "caption"]


@dataclass
class CaptionedClip:
    clip_id: str
    features: np.ndarray
    captions: list[str]

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"clip {self.clip_id}: features must be (T_a>=1, F)")
        if not self.captions:
            raise DataError(f"clip {self.clip_id}: at least one caption is required")


@dataclass
class CaptionDataset:
    name: str
    clips: list[CaptionedClip]
    split: str = "train"

    def __len__(self):
        return len(self.clips)

    def captions(self) -> list[str]:
        return [c for clip in self.clips for c in clip.captions]

    def examples(self, vocab: Vocabulary, drop_oov: bool = False,
                 stats: EncodeStats | None = None) -> list[Example]:
        """One example per (clip, caption) pair, in manifest order."""
        out = []
        for clip in self.clips:
            for cap in clip.captions:
                out.append(Example(clip.clip_id, clip.features,
                                   encode_caption(cap, vocab, drop_oov=drop_oov, stats=stats)))
        return out


@dataclass(frozen=True)
class Example:
    clip_id: str
    features: np.ndarray
    tokens: list[int]


def read_manifest(path) -> CaptionDataset:
    """Load a ``clip_id,feature_file,caption`` CSV; feature paths are manifest-relative."""
    path = Path(path)
    root = path.parent
    clips: dict[str, CaptionedClip] = {}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty manifest", path=path) from None
        except csv.Error as exc:
            raise FormatError(f"line 1: {exc}", path=path) from exc
        if header != MANIFEST_HEADER:
            raise FormatError(f"line 1: expected header {','.join(MANIFEST_HEADER)}", path=path)
        cache: dict[str, np.ndarray] = {}
        try:
            for row in reader:
                line = reader.line_num
                if len(row) != 3:
                    raise FormatError(f"line {line}: expected 3 fields, got {len(row)}", path=path)
                clip_id, feat, caption = row
                if not clip_id or not feat:
                    raise FormatError(f"line {line}: empty clip_id or feature_file", path=path)
                if feat not in cache:
                    fpath = root / feat
                    if not fpath.exists():
                        raise FormatError(f"line {line}: missing feature file {feat}", path=path)
                    cache[feat] = load_features(fpath)
                if clip_id in clips:
                    clips[clip_id].captions.append(caption)
                else:
                    clips[clip_id] = CaptionedClip(clip_id, cache[feat], [caption])
        except csv.Error as exc:
            raise FormatError(f"line {reader.line_num}: {exc}", path=path) from exc
    if not clips:
        raise FormatError("manifest has no rows", path=path)
    return CaptionDataset(name=root.name, clips=list(clips.values()), split=path.stem)


def write_manifest(dataset: CaptionDataset, path, feature_dir: str = "features") -> None:
    path = Path(path)
    (path.parent / feature_dir).mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for clip in dataset.clips:
            rel = f"{feature_dir}/{clip.clip_id}.afb"
            save_features(clip.features, path.parent / rel)
            for cap in clip.captions:
                w.writerow([clip.clip_id, rel, cap])


@dataclass
class Batch:
    """Padded examples. ``tokens`` holds SOS ... EOS PAD...; targets are tokens[:, 1:]."""

    clip_ids: list[str]
    features: np.ndarray
    feature_lengths: np.ndarray
    tokens: np.ndarray
    token_lengths: np.ndarray
    feature_mask: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        T = self.features.shape[1]
        self.feature_mask = np.arange(T)[None] < self.feature_lengths[:, None]

    def __len__(self):
        return len(self.clip_ids)

    @property
    def inputs(self) -> np.ndarray:
        return self.tokens[:, :-1]

    @property
    def targets(self) -> np.ndarray:
        return self.tokens[:, 1:]

    @property
    def token_mask(self) -> np.ndarray:
        """True where the target step is a real token (not padding)."""
        steps = np.arange(self.tokens.shape[1] - 1)[None]
        return steps < (self.token_lengths - 1)[:, None]


def pad_batch(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise DataError("cannot pad an empty batch")
    f_lens = np.array([e.features.shape[0] for e in examples])
    t_lens = np.array([len(e.tokens) for e in examples])
    n_mels = examples[0].features.shape[1]
    feats = np.zeros((len(examples), f_lens.max(), n_mels))
    toks = np.full((len(examples), t_lens.max()), PAD, dtype=np.int64)
    for i, e in enumerate(examples):
        feats[i, : f_lens[i]] = e.features
        toks[i, : t_lens[i]] = e.tokens
    return Batch([e.clip_id for e in examples], feats, f_lens, toks, t_lens)


@dataclass(frozen=True)
class StreamConfig:
    batch_size: int = 4
    shuffle_seed: int = 0
    single_pass: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise DataError("batch_size must be at least 1")


def stream_order(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def stream_batches(examples: Sequence[Example], cfg: StreamConfig) -> Iterator[Batch]:
    """Shuffle once by seed and cut into consecutive batches of ``batch_size``.

    With ``single_pass`` every example appears exactly once; otherwise the
    stream reshuffles (seed + pass index) and never ends.
    """
    if not examples:
        raise DataError("stream needs a non-empty dataset")
    n, B = len(examples), cfg.batch_size
    epoch = 0
    while True:
        order = stream_order(n, cfg.shuffle_seed + epoch)
        for start in range(0, n, B):
            yield pad_batch([examples[i] for i in order[start:start + B]])
        if cfg.single_pass:
            return
        epoch += 1


def n_stream_batches(n_examples: int, batch_size: int) -> int:
    return -(-n_examples // batch_size)
