"""Deterministic desk-scale stand-ins for an original and a new captioning corpus.

Each dataset has its own sound classes. A class owns a spectral profile
(features are that profile modulated by a class-rate envelope plus noise)
and a small phrase grammar: a sequence of word slots, some with two
alternatives. The two datasets draw their words from pools of equal size
that share a configurable fraction of words.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .dataset import CaptionDataset, CaptionedClip, write_manifest
from .vocab import build_vocabulary

SPLITS = ("train", "val", "test")
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_classes: int = 8
    vocab_size: int = 40
    overlap: float = 0.6
    train_clips_per_class: int = 4
    new_train_clips_per_class: int = 8
    val_clips_per_class: int = 1
    test_clips_per_class: int = 2
    ori_captions_per_clip: int = 5
    new_captions_per_clip: int = 1
    n_frames: int = 24
    n_mels: int = 64
    noise: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise DataError("overlap must lie in [0, 1]")
        if self.vocab_size < self.n_classes:
            raise DataError("vocab_size must give every class at least one word")
        if min(self.train_clips_per_class, self.new_train_clips_per_class) < 1 or self.n_classes < 1 or self.n_frames < 1:
            raise DataError("class, clip and frame counts must be positive")


def pseudo_words(n: int, rng: np.random.Generator) -> list[str]:
    """n distinct pronounceable lowercase words."""
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def word_pools(cfg: SynthConfig) -> tuple[list[str], list[str], list[str]]:
    """(ori pool, new pool, shared words) with round(overlap * vocab_size) shared."""
    rng = np.random.default_rng([cfg.seed, 0])
    V = cfg.vocab_size
    n_shared = int(round(cfg.overlap * V))
    words = pseudo_words(2 * V - n_shared, rng)
    ori = words[:V]
    shared = [ori[i] for i in sorted(rng.choice(V, size=n_shared, replace=False))]
    new = shared + words[V:]
    return ori, new, shared


def class_grammars(pool: list[str], n_classes: int, rng: np.random.Generator) -> list[list[list[str]]]:
    """Split a word pool into per-class slot lists; slot widths cycle 1, 2."""
    order = [pool[i] for i in rng.permutation(len(pool))]
    grammars = []
    for chunk in np.array_split(np.array(order, dtype=object), n_classes):
        chunk = list(chunk)
        slots, i, width = [], 0, 1
        while i < len(chunk):
            slots.append(chunk[i:i + width])
            i += width
            width = 3 - width
        grammars.append(slots)
    return grammars


def render_caption(slots: list[list[str]], m: int) -> str:
    # m=0 and m=1 together use every alternative; later m add variety
    words = []
    for s, alts in enumerate(slots):
        pick = (m + ((m // 2) >> s)) % len(alts)
        words.append(alts[pick])
    return " ".join(words)


def _class_features(rng, T, profile, rate, noise):
    t = np.arange(T)[:, None]
    phase = rng.uniform(0, 2 * np.pi)
    env = 1.0 + 0.5 * np.sin(2 * np.pi * rate * t + phase)
    return profile[None, :] * env + noise * rng.normal(size=(T, profile.size))


def make_dataset(name: str, pool: list[str], captions_per_clip: int, cfg: SynthConfig,
                 stream: int, variable_length: bool, train_clips: int) -> dict[str, CaptionDataset]:
    rng = np.random.default_rng([cfg.seed, stream])
    grammars = class_grammars(pool, cfg.n_classes, rng)
    profiles = [np.cumsum(rng.normal(0, 0.4, cfg.n_mels)) + rng.normal(0, 1.0) for _ in grammars]
    profiles = [p - p.mean() + rng.normal(0, 0.5) for p in profiles]
    rates = rng.uniform(0.03, 0.3, size=len(grammars))
    counts = {"train": train_clips, "val": cfg.val_clips_per_class,
              "test": cfg.test_clips_per_class}
    out = {}
    serial = {j: 0 for j in range(len(grammars))}
    for split in SPLITS:
        clips = []
        for k in range(counts[split]):
            for j, slots in enumerate(grammars):
                T = int(rng.integers(cfg.n_frames, 2 * cfg.n_frames + 1)) if variable_length else cfg.n_frames
                feats = _class_features(rng, T, profiles[j], rates[j], cfg.noise)
                base = serial[j]
                caps = [render_caption(slots, base * captions_per_clip + c) for c in range(captions_per_clip)]
                serial[j] += 1
                clips.append(CaptionedClip(f"{name}_{split}_{j:02d}_{k:03d}", feats.astype(np.float32).astype(np.float64), caps))
        out[split] = CaptionDataset(name=name, clips=clips, split=split)
    return out


def synthesize(cfg: SynthConfig) -> dict:
    """Both corpora in memory: {"ori": {split: CaptionDataset}, "new": {...}, "meta": {...}}."""
    ori_pool, new_pool, shared = word_pools(cfg)
    ori = make_dataset("ori", ori_pool, cfg.ori_captions_per_clip, cfg, stream=1, variable_length=True,
                       train_clips=cfg.train_clips_per_class)
    new = make_dataset("new", new_pool, cfg.new_captions_per_clip, cfg, stream=2, variable_length=False,
                       train_clips=cfg.new_train_clips_per_class)
    meta = {"config": asdict(cfg), "ori_pool": ori_pool, "new_pool": new_pool, "shared_words": shared}
    return {"ori": ori, "new": new, "meta": meta}


def write_synthetic(cfg: SynthConfig, out_dir, force: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty (use --force to overwrite)")
    data = synthesize(cfg)
    for name in ("ori", "new"):
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        for split, ds in data[name].items():
            write_manifest(ds, d / f"{split}.csv")
        build_vocabulary(data[name]["train"].captions()).save(d / "vocab.txt")
    (out / "meta.json").write_text(json.dumps(data["meta"], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
