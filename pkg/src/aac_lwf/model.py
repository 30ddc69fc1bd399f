"""WaveTransformer-style captioner at desk scale.

Two encoders read the same (T_a, F) log-mel input in parallel: a gated,
dilated 1-D convolution stack for temporal patterns and a depthwise
separable 2-D convolution stack for time-frequency patterns. Neither
changes the number of frames. A merge layer fuses them and a post-norm
transformer decoder with causal self-attention and cross-attention over
the merged sequence predicts one word distribution per caption step.

Batched inputs are (B, T_a, F) with optional ``lengths``; a single
(T_a, F) clip is accepted too and gives unbatched outputs.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, InvariantError, ParameterError, VocabularyError
from .numerics import Tensor

PAD, SOS, EOS, UNK = 0, 1, 2, 3
_NEG = -1e30


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_mels: int = 64
    d_model: int = 64
    n_temporal_blocks: int = 4
    dilation_schedule: tuple[int, ...] = (1, 2, 4, 8)
    temporal_kernel: int = 3
    n_tf_blocks: int = 2
    tf_channels: int = 8
    tf_pool: int = 4
    n_decoder_blocks: int = 3
    n_heads: int = 4
    d_ff: int = 128
    max_caption_len: int = 22
    classifier_temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))
        sizes = ("vocab_size", "n_mels", "d_model", "n_temporal_blocks", "temporal_kernel",
                 "tf_channels", "tf_pool", "n_decoder_blocks", "n_heads", "d_ff", "max_caption_len")
        for name in sizes:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.n_tf_blocks < 0:
            raise ConfigError("model.n_tf_blocks must be non-negative")
        if self.vocab_size < 4:
            raise ConfigError("model.vocab_size must cover the 3 specials plus at least one word")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if len(self.dilation_schedule) != self.n_temporal_blocks:
            raise ConfigError("dilation_schedule needs one entry per temporal block")
        if any(d < 1 for d in self.dilation_schedule):
            raise ConfigError("dilations must be positive")
        if self.temporal_kernel % 2 == 0:
            raise ConfigError("temporal_kernel must be odd")
        if self.n_mels % (self.tf_pool ** self.n_tf_blocks):
            raise ConfigError("n_mels must be divisible by tf_pool ** n_tf_blocks")
        if not self.classifier_temperature > 0:
            raise ConfigError("classifier_temperature must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_schedule"] = list(self.dilation_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; a pure function of the config."""
    d, K = cfg.d_model, cfg.temporal_kernel
    shapes: dict[str, tuple[int, ...]] = {
        "temporal.in.w": (cfg.n_mels, d),
        "temporal.in.b": (d,),
    }
    for i in range(cfg.n_temporal_blocks):
        for part in ("filter", "gate"):
            shapes[f"temporal.{i}.{part}.w"] = (K, d, d)
            shapes[f"temporal.{i}.{part}.b"] = (d,)
        shapes[f"temporal.{i}.res.w"] = (d, d)
        shapes[f"temporal.{i}.res.b"] = (d,)
    c_in = 1
    for j in range(cfg.n_tf_blocks):
        shapes[f"tf.{j}.dw.w"] = (3, 3, c_in)
        shapes[f"tf.{j}.dw.b"] = (c_in,)
        shapes[f"tf.{j}.pw.w"] = (c_in, cfg.tf_channels)
        shapes[f"tf.{j}.pw.b"] = (cfg.tf_channels,)
        c_in = cfg.tf_channels
    n_freq = cfg.n_mels // (cfg.tf_pool ** cfg.n_tf_blocks)
    shapes["tf.out.w"] = (n_freq * c_in, d)
    shapes["tf.out.b"] = (d,)
    shapes["merge.w"] = (2 * d, d)
    shapes["merge.b"] = (d,)
    shapes["dec.embed"] = (cfg.vocab_size, d)
    for i in range(cfg.n_decoder_blocks):
        for att in ("self", "cross"):
            for proj in ("q", "k", "v", "o"):
                shapes[f"dec.{i}.{att}.{proj}.w"] = (d, d)
                shapes[f"dec.{i}.{att}.{proj}.b"] = (d,)
        shapes[f"dec.{i}.ff1.w"] = (d, cfg.d_ff)
        shapes[f"dec.{i}.ff1.b"] = (cfg.d_ff,)
        shapes[f"dec.{i}.ff2.w"] = (cfg.d_ff, d)
        shapes[f"dec.{i}.ff2.b"] = (d,)
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"dec.{i}.{ln}.g"] = (d,)
            shapes[f"dec.{i}.{ln}.b"] = (d,)
    shapes["cls.w"] = (d, cfg.vocab_size)
    shapes["cls.b"] = (cfg.vocab_size,)
    return shapes


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 3 and shape[0] == 3 and shape[1] == 3:  # depthwise kernel
        return 9, 9
    receptive = int(np.prod(shape[:-2]))
    return receptive * shape[-2], receptive * shape[-1]


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def separable_conv2d(x: Tensor, dw_w: Tensor, dw_b: Tensor, pw_w: Tensor, pw_b: Tensor) -> Tensor:
    """Depthwise 3x3 per channel, then a 1x1 pointwise channel mix. x is (B, T, F, C)."""
    return nx.linear(nx.depthwise_conv2d(x, dw_w, dw_b), pw_w, pw_b)


def separable_param_count(c_in: int, c_out: int, k: int = 3) -> int:
    return k * k * c_in + c_in + c_in * c_out + c_out


def full_conv_param_count(c_in: int, c_out: int, k: int = 3) -> int:
    return k * k * c_in * c_out + c_out


def _frame_mask(lengths, batch: int, n_frames: int) -> np.ndarray | None:
    if lengths is None:
        return None
    lengths = np.asarray(lengths)
    if lengths.shape != (batch,):
        raise ParameterError("lengths must give one frame count per batch item")
    mask = np.arange(n_frames)[None, :] < lengths[:, None]
    if mask.all():
        return None
    return mask.astype(np.float64)


class WaveTransformer:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = param_shapes(config)
        if list(self.params) != list(expected) or any(
                self.params[k].shape != s for k, s in expected.items()):
            raise ConfigError("parameter set does not match the model config")
        self._pe = sinusoidal_encoding(config.max_caption_len, config.d_model)

    def clone(self) -> WaveTransformer:
        params = {k: Tensor(p.data, requires_grad=True, name=k) for k, p in self.params.items()}
        return WaveTransformer(self.config, params)

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- input normalisation -------------------------------------------------

    def _batch_features(self, X):
        arr = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1] < 1:
            raise ParameterError(f"features must be (T_a, F) or (B, T_a, F), got {arr.shape}")
        if arr.shape[-1] != self.config.n_mels:
            raise ConfigError(f"feature dim {arr.shape[-1]} != n_mels {self.config.n_mels}")
        if isinstance(X, Tensor):
            return (nx.reshape(X, arr.shape) if single else X), single
        return Tensor._wrap(arr), single

    # -- encoders ----------------------------------------------------------------

    def encode_temporal(self, X, lengths=None) -> Tensor:
        x, single = self._batch_features(X)
        p = self.params
        mask = _frame_mask(lengths, x.shape[0], x.shape[1])
        mask3 = None if mask is None else mask[..., None]
        h = nx.linear(x, p["temporal.in.w"], p["temporal.in.b"])
        if mask3 is not None:
            h = h * mask3
        for i, dil in enumerate(self.config.dilation_schedule):
            f = nx.tanh(nx.conv1d(h, p[f"temporal.{i}.filter.w"], p[f"temporal.{i}.filter.b"], dil))
            g = nx.sigmoid(nx.conv1d(h, p[f"temporal.{i}.gate.w"], p[f"temporal.{i}.gate.b"], dil))
            h = h + nx.linear(f * g, p[f"temporal.{i}.res.w"], p[f"temporal.{i}.res.b"])
            if mask3 is not None:
                h = h * mask3
        return nx.reshape(h, h.shape[1:]) if single else h

    def encode_tf(self, X, lengths=None) -> Tensor:
        x, single = self._batch_features(X)
        cfg, p = self.config, self.params
        B, T, F = x.shape
        mask = _frame_mask(lengths, B, T)
        mask4 = None if mask is None else mask[..., None, None]
        h = nx.reshape(x, (B, T, F, 1))
        n_freq = F
        for j in range(cfg.n_tf_blocks):
            h = nx.gelu(separable_conv2d(h, p[f"tf.{j}.dw.w"], p[f"tf.{j}.dw.b"],
                                         p[f"tf.{j}.pw.w"], p[f"tf.{j}.pw.b"]))
            n_freq //= cfg.tf_pool
            h = nx.mean(nx.reshape(h, (B, T, n_freq, cfg.tf_pool, h.shape[-1])), axis=3)
            if mask4 is not None:
                h = h * mask4
        h = nx.reshape(h, (B, T, n_freq * h.shape[-1]))
        out = nx.linear(h, p["tf.out.w"], p["tf.out.b"])
        if mask is not None:
            out = out * mask[..., None]
        return nx.reshape(out, out.shape[1:]) if single else out

    def merge(self, h_temp: Tensor, h_tf: Tensor) -> Tensor:
        h_temp, h_tf = nx.as_tensor(h_temp), nx.as_tensor(h_tf)
        if h_temp.shape[:-1] != h_tf.shape[:-1]:
            raise InvariantError(f"encoder lengths differ: {h_temp.shape} vs {h_tf.shape}")
        return nx.tanh(nx.linear(nx.concat([h_temp, h_tf], axis=-1), self.params["merge.w"], self.params["merge.b"]))

    def encode(self, X, lengths=None) -> Tensor:
        return self.merge(self.encode_temporal(X, lengths), self.encode_tf(X, lengths))

    # -- decoder -----------------------------------------------------------------

    def _attention(self, xq: Tensor, xkv: Tensor, prefix: str, additive_mask) -> Tensor:
        p, h = self.params, self.config.n_heads
        B, Tq, d = xq.shape
        Tk = xkv.shape[1]
        dk = d // h

        def heads(t, n):
            return nx.transpose(nx.reshape(t, (B, n, h, dk)), (0, 2, 1, 3))

        q = heads(nx.linear(xq, p[prefix + ".q.w"], p[prefix + ".q.b"]), Tq)
        k = heads(nx.linear(xkv, p[prefix + ".k.w"], p[prefix + ".k.b"]), Tk)
        v = heads(nx.linear(xkv, p[prefix + ".v.w"], p[prefix + ".v.b"]), Tk)
        scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
        if additive_mask is not None:
            scores = scores + additive_mask
        att = nx.softmax_t(scores, 1.0)
        out = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (B, Tq, d))
        return nx.linear(out, p[prefix + ".o.w"], p[prefix + ".o.b"])

    def embed_tokens(self, Y_in) -> Tensor:
        ids = np.asarray(Y_in, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabularyError(f"token id outside vocabulary of size {self.config.vocab_size}")
        if ids.shape[1] > self.config.max_caption_len:
            raise ParameterError(f"caption length {ids.shape[1]} exceeds max_caption_len")
        emb = nx.embedding(self.params["dec.embed"], ids)
        return emb + self._pe[: ids.shape[1]]

    def decode_embedded(self, H: Tensor, E: Tensor, lengths=None) -> Tensor:
        """Decoder blocks plus classifier on already-embedded inputs (B, T_w, d)."""
        p = self.params
        B, Tw, _ = E.shape
        causal = np.triu(np.full((Tw, Tw), _NEG), k=1)[None, None]
        fmask = _frame_mask(lengths, B, H.shape[1])
        cross_mask = None if fmask is None else np.where(fmask > 0, 0.0, _NEG)[:, None, None, :]
        x = E
        for i in range(self.config.n_decoder_blocks):
            pre = f"dec.{i}"
            x = nx.layer_norm(x + self._attention(x, x, pre + ".self", causal), p[pre + ".ln1.g"], p[pre + ".ln1.b"])
            x = nx.layer_norm(x + self._attention(x, H, pre + ".cross", cross_mask), p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            ff = nx.linear(nx.gelu(nx.linear(x, p[pre + ".ff1.w"], p[pre + ".ff1.b"])), p[pre + ".ff2.w"], p[pre + ".ff2.b"])
            x = nx.layer_norm(x + ff, p[pre + ".ln3.g"], p[pre + ".ln3.b"])
        return nx.linear(x, p["cls.w"], p["cls.b"])

    def decode(self, H, Y_in, lengths=None) -> Tensor:
        H = nx.as_tensor(H)
        single = H.ndim == 2
        if single:
            H = nx.reshape(H, (1,) + H.shape)
        logits = self.decode_embedded(H, self.embed_tokens(Y_in), lengths)
        return nx.reshape(logits, logits.shape[1:]) if single else logits

    def logits(self, X, Y_in, lengths=None) -> Tensor:
        x, single = self._batch_features(X)
        out = self.decode_embedded(self.encode(x, lengths), self.embed_tokens(Y_in), lengths)
        return nx.reshape(out, out.shape[1:]) if single else out

    def forward(self, X, Y_in, temperature: float | None = None, lengths=None) -> Tensor:
        t = self.config.classifier_temperature if temperature is None else temperature
        return nx.softmax_t(self.logits(X, Y_in, lengths), t)

    __call__ = forward

    def generate_greedy(self, X, max_len: int | None = None, lengths=None) -> list[list[int]] | list[int]:
        """Greedy decoding from the start token; sequences include SOS and EOS.

        ``max_len`` bounds the total sequence length, SOS included.
        """
        max_len = self.config.max_caption_len if max_len is None else max_len
        if max_len > self.config.max_caption_len:
            raise ParameterError("max_len exceeds max_caption_len")
        x, single = self._batch_features(X)
        B = x.shape[0]
        with nx.no_grad():
            H = self.encode(x, lengths)
            seqs = np.full((B, 1), SOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            while seqs.shape[1] < max_len and not done.all():
                logits = self.decode_embedded(H, self.embed_tokens(seqs), lengths)
                nxt = logits.data[:, -1, :].argmax(axis=-1)
                nxt = np.where(done, PAD, nxt)
                seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
                done |= nxt == EOS
        out = []
        for row in seqs:
            row = row.tolist()
            out.append(row[: row.index(EOS) + 1] if EOS in row else row)
        return out[0] if single else out


def params_digest(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name, p in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
