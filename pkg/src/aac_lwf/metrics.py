"""Caption metrics: CIDEr-D, a labelled SPICE stand-in, and SPIDEr.

The true SPICE scorer needs a scene-graph parser; anything implementing
:class:`CaptionScorer` can replace the unigram-F1 proxy, including an
external process speaking line-delimited JSON (:class:`ExternalScorer`).
"""
from __future__ import annotations

import json
import math
import os
import subprocess
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .data.dataset import Example, pad_batch
from .data.vocab import Vocabulary, decode_tokens, normalize
from .errors import DataError, VocabularyError

CIDER_N = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0


def eval_tokenize(caption: str) -> list[str]:
    return normalize(caption)


def _ngrams(tokens: Sequence[str], n_max: int = CIDER_N) -> Counter:
    counts: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i:i + n])] += 1
    return counts


@dataclass
class NGramStats:
    """Document frequencies of reference n-grams; one document per item."""

    document_frequency: Counter
    corpus_size: int

    @classmethod
    def from_references(cls, references: Sequence[Sequence[Sequence[str]]], n_max: int = CIDER_N):
        df: Counter = Counter()
        for refs in references:
            seen = set()
            for r in refs:
                seen.update(_ngrams(r, n_max))
            df.update(seen)
        return cls(df, len(references))

    def idf(self, ngram) -> float:
        # unseen n-grams get the maximal weight, as in the reference scorer
        return math.log(self.corpus_size) - math.log(max(1.0, self.document_frequency.get(ngram, 0)))


def _tfidf(counts: Counter, stats: NGramStats, n_max: int):
    vec = [dict() for _ in range(n_max)]
    sq = [0.0] * n_max
    for ngram, tf in counts.items():
        v = tf * stats.idf(ngram)
        vec[len(ngram) - 1][ngram] = v
        sq[len(ngram) - 1] += v * v
    return vec, sq


def _cider_item(cand: list[str], refs: list[list[str]], stats: NGramStats, n_max: int, sigma: float) -> float:
    vec_c, sq_c = _tfidf(_ngrams(cand, n_max), stats, n_max)
    total = np.zeros(n_max)
    for ref in refs:
        vec_r, sq_r = _tfidf(_ngrams(ref, n_max), stats, n_max)
        penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * sigma**2))
        for n in range(n_max):
            dot = 0.0
            for g, v in vec_c[n].items():
                r = vec_r[n].get(g)
                if r is not None:
                    dot += min(v, r) * r
            denom = math.sqrt(sq_c[n] * sq_r[n])
            if denom > 0:
                total[n] += dot / denom * penalty
    return float(total.mean() / len(refs) * CIDER_SCALE)


def cider(candidates: Sequence[str], references: Sequence[Sequence[str]], n_max: int = CIDER_N,
          sigma: float = CIDER_SIGMA) -> tuple[float, list[float]]:
    """CIDEr-D corpus score and per-item scores (each in [0, 10])."""
    if len(candidates) != len(references):
        raise DataError("one reference list per candidate is required")
    if not candidates:
        raise DataError("cider needs at least one item")
    if any(len(r) == 0 for r in references):
        raise DataError("every item needs at least one reference")
    cands = [eval_tokenize(c) for c in candidates]
    refs = [[eval_tokenize(r) for r in rs] for rs in references]
    stats = NGramStats.from_references(refs, n_max)
    scores = [_cider_item(c, r, stats, n_max, sigma) for c, r in zip(cands, refs)]
    return float(np.mean(scores)), scores


class CaptionScorer(Protocol):
    name: str

    def score(self, candidates: Sequence[str], references: Sequence[Sequence[str]]) -> list[float]:
        ...


def unigram_f1(candidate: str, references: Sequence[str]) -> float:
    cand = set(eval_tokenize(candidate))
    ref = set()
    for r in references:
        ref.update(eval_tokenize(r))
    hit = len(cand & ref)
    if hit == 0:
        return 0.0
    p, r = hit / len(cand), hit / len(ref)
    return 2 * p * r / (p + r)


class SpiceProxy:
    """Stand-in for SPICE: set-of-unigrams F1 against the union of references."""

    name = "spice_proxy"

    def score(self, candidates, references):
        return [unigram_f1(c, r) for c, r in zip(candidates, references)]


def spice_stub(candidates: Sequence[str], references: Sequence[Sequence[str]],
               scorer: CaptionScorer | None = None) -> tuple[float, list[float]]:
    scorer = scorer or SpiceProxy()
    scores = [float(s) for s in scorer.score(list(candidates), [list(r) for r in references])]
    return (float(np.mean(scores)) if scores else 0.0), scores


class ExternalScorer:
    """Runs ``command`` once per call; stdin/stdout are line-delimited JSON.

    Each input line is ``{"candidate": str, "references": [str, ...]}``;
    each output line must be ``{"score": float}`` (or a bare number), in order.
    """

    def __init__(self, command: Sequence[str], name: str = "external", timeout: float | None = 600):
        self.command = list(command)
        self.name = name
        self.timeout = timeout

    def score(self, candidates, references):
        payload = "".join(json.dumps({"candidate": c, "references": list(r)}) + "\n"
                          for c, r in zip(candidates, references))
        proc = subprocess.run(self.command, input=payload, capture_output=True, text=True,
                              timeout=self.timeout)
        if proc.returncode != 0:
            raise DataError(f"external scorer failed ({proc.returncode}): {proc.stderr.strip()}")
        out = []
        for line in proc.stdout.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(float(obj["score"] if isinstance(obj, dict) else obj))
        if len(out) != len(candidates):
            raise DataError(f"external scorer returned {len(out)} scores for {len(candidates)} items")
        return out


def spider(cider_score: float, spice_score: float) -> float:
    return 0.5 * cider_score + 0.5 * spice_score


EVAL_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EvalReport",
    "type": "object",
    "required": ["spider", "cider", "spice", "spice_impl", "dataset", "split", "update_index",
                 "n_items", "per_item"],
    "properties": {
        "spider": {"type": "number", "minimum": 0},
        "cider": {"type": "number", "minimum": 0},
        "spice": {"type": "number", "minimum": 0},
        "spice_impl": {"type": "string"},
        "dataset": {"type": "string"},
        "split": {"type": "string"},
        "update_index": {"type": ["integer", "null"]},
        "n_items": {"type": "integer", "minimum": 1},
        "per_item": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["clip_id", "candidate", "cider", "spice", "spider"],
                "properties": {
                    "clip_id": {"type": "string"},
                    "candidate": {"type": "string"},
                    "cider": {"type": "number", "minimum": 0},
                    "spice": {"type": "number", "minimum": 0},
                    "spider": {"type": "number", "minimum": 0},
                },
            },
        },
    },
}


@dataclass
class EvalReport:
    spider: float
    cider: float
    spice: float
    spice_impl: str
    dataset: str
    split: str
    update_index: int | None
    per_item: list[dict] = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return len(self.per_item)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_items"] = self.n_items
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        d = dict(d)
        d.pop("n_items", None)
        return cls(**d)


def score_captions(candidates, references, clip_ids=None, spice_scorer: CaptionScorer | None = None,
                   dataset: str = "", split: str = "", update_index: int | None = None) -> EvalReport:
    scorer = spice_scorer or SpiceProxy()
    c_mean, c_items = cider(candidates, references)
    s_mean, s_items = spice_stub(candidates, references, scorer)
    clip_ids = clip_ids or [str(i) for i in range(len(candidates))]
    per_item = [
        {"clip_id": cid, "candidate": cand, "cider": c, "spice": s, "spider": spider(c, s)}
        for cid, cand, c, s in zip(clip_ids, candidates, c_items, s_items)
    ]
    return EvalReport(spider=spider(c_mean, s_mean), cider=c_mean, spice=s_mean, spice_impl=scorer.name,
                      dataset=dataset, split=split, update_index=update_index, per_item=per_item)


def restrict_to_vocab(caption: str, vocab: Vocabulary) -> str:
    return " ".join(w for w in normalize(caption) if w in vocab)


def _eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("LWF_THREADS", "1")))
    except ValueError:
        return 1


def generate_captions(model, dataset, vocab: Vocabulary, batch_size: int = 32) -> list[str]:
    """Greedy captions for every clip, in dataset order."""
    clips = dataset.clips
    chunks = [clips[i:i + batch_size] for i in range(0, len(clips), batch_size)]

    def run(chunk):
        batch = pad_batch([Example(c.clip_id, c.features, [0]) for c in chunk])
        seqs = model.generate_greedy(batch.features, lengths=batch.feature_lengths)
        return [decode_tokens(s, vocab) for s in seqs]

    threads = min(_eval_threads(), len(chunks))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    return [c for r in results for c in r]


def evaluate_dataset(model, dataset, vocab: Vocabulary, spice_scorer: CaptionScorer | None = None,
                     update_index: int | None = None, restrict_references: bool = True,
                     batch_size: int = 32) -> EvalReport:
    """Greedy-decode each clip and score against its references.

    With ``restrict_references`` reference words outside ``vocab`` are
    removed first, matching how new-data captions are encoded.
    """
    if model.config.vocab_size != len(vocab):
        raise VocabularyError(f"model vocabulary size {model.config.vocab_size} != {len(vocab)}")
    candidates = generate_captions(model, dataset, vocab, batch_size)
    refs = []
    for clip in dataset.clips:
        rs = [restrict_to_vocab(r, vocab) for r in clip.captions] if restrict_references else list(clip.captions)
        refs.append(rs)
    return score_captions(candidates, refs, [c.clip_id for c in dataset.clips], spice_scorer,
                          dataset=dataset.name, split=dataset.split, update_index=update_index)
