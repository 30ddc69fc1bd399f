import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aac_lwf import numerics as nx
from aac_lwf.data import (EOS, SOS, UNK, CaptionDataset, CaptionedClip, EncodeStats, Example, StreamConfig,
                          SynthConfig, Vocabulary, build_vocabulary, decode_tokens, encode_caption,
                          extract_logmel, intersect_vocabulary, load_features, n_stream_batches, normalize,
                          pad_batch, read_manifest, save_features, stream_batches, synthesize, write_manifest,
                          write_synthetic)
from aac_lwf.data.features import LOG_FLOOR, mel_filterbank, n_frames
from aac_lwf.data.synth import render_caption, word_pools
from aac_lwf.errors import DataError, FormatError
from aac_lwf.model import WaveTransformer
from aac_lwf.numerics import Tensor

from conftest import SMALL_SYNTH, tiny_config

words = st.text(alphabet="abcdefghij", min_size=1, max_size=6)


# vocabulary ----------------------------------------------------------------

def test_build_vocabulary_small_corpus():
    v = build_vocabulary(["a dog barks", "a cat"])
    assert len(v) == 8
    assert v.tokens[:4] == ["<pad>", "<sos>", "<eos>", "<unk>"]
    assert sorted(v.words) == ["a", "barks", "cat", "dog"]


def test_build_vocabulary_is_deterministic():
    corpus = ["the rain falls", "A bird sings, loudly.", "rain and wind"]
    assert build_vocabulary(corpus).tokens == build_vocabulary(list(corpus)).tokens


def test_build_vocabulary_empty_corpus():
    with pytest.raises(DataError):
        build_vocabulary(["", "  "])


def test_intersect_identical_and_disjoint():
    v = build_vocabulary(["a dog barks"])
    assert intersect_vocabulary(v, v).n_removed == 0
    other = build_vocabulary(["zu ki"])
    res = intersect_vocabulary(other, v)
    assert sorted(res.removed) == ["ki", "zu"]
    assert res.vocab == v


def test_vocabulary_file_round_trip(tmp_path):
    v = build_vocabulary(["a dog barks"])
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text().splitlines()
    assert lines[:4] == ["<pad>", "<sos>", "<eos>", "<unk>"]
    assert Vocabulary.load(tmp_path / "vocab.txt") == v
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(FormatError):
        Vocabulary.load(tmp_path / "bad.txt")


def test_encode_in_vocabulary():
    v = build_vocabulary(["a dog barks"])
    assert encode_caption("A dog barks.", v) == [SOS, v.index("a"), v.index("dog"), v.index("barks"), EOS]


def test_encode_drops_oov():
    v = build_vocabulary(["a dog barks"])
    stats = EncodeStats()
    ids = encode_caption("a zyxxy dog", v, drop_oov=True, stats=stats)
    assert ids == [SOS, v.index("a"), v.index("dog"), EOS]
    assert stats.dropped_words == 1
    assert encode_caption("a zyxxy dog", v)[2] == UNK


@given(st.lists(words, min_size=1, max_size=8))
def test_encode_decode_round_trip(ws):
    caption = " ".join(ws)
    v = build_vocabulary([caption])
    assert decode_tokens(encode_caption(caption, v), v) == " ".join(normalize(caption))


# features ------------------------------------------------------------------

@pytest.mark.parametrize("seconds,frames", [(10, 862), (15, 1292), (30, 2584)])
def test_frame_counts(seconds, frames):
    assert n_frames(44100 * seconds) == frames


def test_ten_second_clip_shape():
    x = np.random.default_rng(0).normal(size=441000) * 0.1
    assert extract_logmel(x).shape == (862, 64)


def test_silence_gives_floor_everywhere():
    feats = extract_logmel(np.zeros(44100))
    np.testing.assert_array_equal(feats, np.full((87, 64), math.log(LOG_FLOOR)))


def test_filterbank_shape_and_support():
    fb = mel_filterbank()
    assert fb.shape == (64, 513)
    assert np.all(fb >= 0) and np.all(fb <= 1)


def test_wrong_sample_rate():
    with pytest.raises(DataError):
        extract_logmel(np.zeros(100), sample_rate=16000)


def test_feature_file_round_trip(tmp_path):
    f = np.random.default_rng(1).normal(size=(13, 64)).astype(np.float32)
    save_features(f, tmp_path / "x.afb")
    assert (tmp_path / "x.afb").stat().st_size == 13 * 64 * 4 + 12
    np.testing.assert_array_equal(load_features(tmp_path / "x.afb"), f.astype(np.float64))


def test_truncated_feature_file(tmp_path):
    save_features(np.ones((4, 8)), tmp_path / "x.afb")
    raw = (tmp_path / "x.afb").read_bytes()
    (tmp_path / "t.afb").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_features(tmp_path / "t.afb")
    (tmp_path / "h.afb").write_bytes(raw[:5])
    with pytest.raises(FormatError):
        load_features(tmp_path / "h.afb")
    (tmp_path / "m.afb").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_features(tmp_path / "m.afb")


# manifests -----------------------------------------------------------------

def _toy_dataset():
    rng = np.random.default_rng(2)
    clips = [CaptionedClip("c0", rng.normal(size=(5, 8)).astype(np.float32).astype(float), ["a dog", "a cat, here"]),
             CaptionedClip("c1", rng.normal(size=(3, 8)).astype(np.float32).astype(float), ["rain"])]
    return CaptionDataset("toy", clips, "train")


def test_manifest_round_trip(tmp_path):
    ds = _toy_dataset()
    write_manifest(ds, tmp_path / "train.csv")
    text = (tmp_path / "train.csv").read_text()
    assert text.splitlines()[0] == "clip_id,feature_file,caption"
    back = read_manifest(tmp_path / "train.csv")
    assert [c.clip_id for c in back.clips] == ["c0", "c1"]
    assert back.clips[0].captions == ["a dog", "a cat, here"]
    np.testing.assert_array_equal(back.clips[1].features, ds.clips[1].features)


@pytest.mark.parametrize("body,line", [("c0,features/c0.afb\n", 2), ("c0,features/nope.afb,x\n", 2),
                                       ("c0,features/c0.afb,x\n,features/c0.afb,y\n", 3)])
def test_corrupt_manifest_reports_line(tmp_path, body, line):
    write_manifest(_toy_dataset(), tmp_path / "ok.csv")
    (tmp_path / "bad.csv").write_text("clip_id,feature_file,caption\n" + body)
    with pytest.raises(FormatError, match=f"line {line}"):
        read_manifest(tmp_path / "bad.csv")


def test_manifest_bad_header(tmp_path):
    (tmp_path / "bad.csv").write_text("id,file,text\n")
    with pytest.raises(FormatError, match="line 1"):
        read_manifest(tmp_path / "bad.csv")


# batching and the stream ---------------------------------------------------

def _examples(n, rng=None):
    rng = rng or np.random.default_rng(3)
    return [Example(f"e{i}", rng.normal(size=(int(rng.integers(2, 6)), 64)), [SOS] + [4] * int(rng.integers(1, 4)) + [EOS])
            for i in range(n)]


def test_stream_partition_4_4_2():
    sizes = [len(b) for b in stream_batches(_examples(10), StreamConfig(batch_size=4))]
    assert sizes == [4, 4, 2]


def test_update_count_for_38118_examples():
    assert n_stream_batches(38118, 4) == 9530


def test_stream_is_seeded():
    ex = _examples(9)
    a = [b.clip_ids for b in stream_batches(ex, StreamConfig(3, shuffle_seed=5))]
    b = [b.clip_ids for b in stream_batches(ex, StreamConfig(3, shuffle_seed=5))]
    c = [b.clip_ids for b in stream_batches(ex, StreamConfig(3, shuffle_seed=6))]
    assert a == b and a != c


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 13), st.integers(0, 1000))
def test_stream_single_pass_coverage(n, B, seed):
    ex = [Example(f"e{i}", np.zeros((1, 2)), [SOS, EOS]) for i in range(n)]
    batches = list(stream_batches(ex, StreamConfig(B, seed)))
    ids = [c for b in batches for c in b.clip_ids]
    assert sorted(ids) == sorted(e.clip_id for e in ex)
    assert len(batches) == n_stream_batches(n, B)


def test_pad_single_example_has_full_masks():
    b = pad_batch(_examples(1))
    assert b.feature_mask.all() and b.token_mask.all()


def test_pad_lengths_5_and_3():
    ex = [Example("a", np.ones((5, 4)), [SOS, 4, EOS]), Example("b", np.ones((3, 4)), [SOS, EOS])]
    b = pad_batch(ex)
    assert b.feature_mask[1].tolist() == [True, True, True, False, False]
    assert b.token_mask.tolist() == [[True, True], [True, False]]


def test_padded_loss_equals_mean_of_unpadded_losses():
    model = WaveTransformer(tiny_config(vocab_size=8), seed=3)
    ex = [Example("a", np.random.default_rng(4).normal(size=(6, 64)), [SOS, 4, 5, 6, EOS]),
          Example("b", np.random.default_rng(5).normal(size=(3, 64)), [SOS, 7, EOS])]
    b = pad_batch(ex)
    padded = nx.cross_entropy(b.targets, model.forward(b.features, b.inputs, lengths=b.feature_lengths),
                              b.token_mask).item()
    singles = []
    for e in ex:
        t = np.array(e.tokens)
        singles.append(nx.cross_entropy(t[1:], model.forward(e.features, t[:-1])).item())
    assert padded == pytest.approx(np.mean(singles), abs=1e-10)


def test_empty_batch_and_stream():
    with pytest.raises(DataError):
        pad_batch([])
    with pytest.raises(DataError):
        list(stream_batches([], StreamConfig()))


# synthetic corpora ---------------------------------------------------------

def test_synth_overlap_60_of_100():
    cfg = SynthConfig(vocab_size=100, overlap=0.6)
    ori, new, shared = word_pools(cfg)
    assert len(ori) == len(new) == 100 and len(set(ori) & set(new)) == 60 == len(shared)
    data = synthesize(cfg)
    v_ori = build_vocabulary(data["ori"]["train"].captions())
    v_new = build_vocabulary(data["new"]["train"].captions())
    assert len(set(v_ori.words) & set(v_new.words)) == 60


def test_synth_default_rows_per_clip(tmp_path):
    write_synthetic(SMALL_SYNTH, tmp_path / "d")
    lines = (tmp_path / "d" / "ori" / "train.csv").read_text().splitlines()[1:]
    per_clip = {}
    for ln in lines:
        per_clip[ln.split(",")[0]] = per_clip.get(ln.split(",")[0], 0) + 1
    assert set(per_clip.values()) == {SynthConfig().ori_captions_per_clip} == {5}
    new_lines = (tmp_path / "d" / "new" / "train.csv").read_text().splitlines()[1:]
    assert len(new_lines) == SMALL_SYNTH.n_classes * SMALL_SYNTH.new_train_clips_per_class


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_byte_deterministic(tmp_path):
    write_synthetic(SMALL_SYNTH, tmp_path / "a")
    write_synthetic(SMALL_SYNTH, tmp_path / "b")
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_synth_refuses_non_empty_dir(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "keep").write_text("")
    with pytest.raises(FileExistsError):
        write_synthetic(SMALL_SYNTH, tmp_path / "x")
    write_synthetic(SMALL_SYNTH, tmp_path / "x", force=True)


def test_render_caption_uses_every_alternative():
    slots = [["a"], ["b", "c"], ["d"], ["e", "f"]]
    seen = set(render_caption(slots, 0).split()) | set(render_caption(slots, 1).split())
    assert seen == set("abcdef")


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig(overlap=1.5)
