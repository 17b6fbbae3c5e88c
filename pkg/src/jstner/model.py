"""Speech encoder (conv subsampler + Conformer-style blocks + CTC tap +
CTC compression) and the three joint translation/NER decoder variants:

* ``inline``       -- entity tags are ordinary output tokens; the target
                      vocabulary grows by the 36 tag tokens.
* ``parallel``     -- a second linear head classifies each emitted token's
                      entity category (19 classes) next to the token head.
* ``parallel_emb`` -- like parallel, but embeddings of the previous tokens'
                      categories are summed into the decoder input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import nncore as nn
from .data import Vocab
from .nncore import tensor as nt
from .nncore.optim import Parameter
from .nncore.tensor import Tensor
from .tagset import (LABELS, AnnotatedText, label_id, serialize_inline,
                     to_token_labels)
from .util import rng_for

VARIANTS = ("inline", "parallel", "parallel_emb")
N_TAG_CLASSES = len(LABELS)  # 19


class InputTooShort(ValueError):
    pass


class TagAlignmentMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int                 # target vocab incl. specials (+36 tags for inline)
    src_vocab_size: int             # source tokens; CTC head width is +1 for blank
    variant: str = "parallel_emb"
    feature_dim: int = 80
    subsample_factor: int = 4       # fixed by the two stride-2 convs
    enc_layers: int = 4
    dec_layers: int = 2
    model_dim: int = 64
    ffn_dim: int = 128
    heads: int = 4
    ctc_tap_layer: int = 0          # 0 -> round(2/3 * enc_layers)
    use_conv_module: bool = True
    conv_kernel: int = 7
    dropout: float = 0.1
    label_smoothing: float = 0.1
    lambda_ctc: float = 0.5
    lambda_tag: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.subsample_factor != 4:
            raise ValueError("subsample factor is fixed at 4 (two stride-2 convs)")
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")
        tap = self.resolved_tap()
        if not (1 <= tap <= self.enc_layers):
            raise ValueError(f"ctc_tap_layer {tap} outside [1, {self.enc_layers}]")

    def resolved_tap(self) -> int:
        return self.ctc_tap_layer if self.ctc_tap_layer else round(2 * self.enc_layers / 3)


@dataclass
class EncoderOutput:
    states: Tensor                      # [T', model_dim], post-compression
    ctc_logits: Tensor                  # [Tp, src_vocab+1], pre-compression
    compression_map: tuple[tuple[int, int], ...]  # contiguous groups over [0, Tp)


@dataclass
class DecoderStepOutput:
    token_logits: Tensor                # [vocab_size]
    tag_logits: Tensor | None           # [19]; None for the inline variant


@dataclass
class LossBreakdown:
    ce: float
    ctc: float
    tag_ce: float
    total: Tensor

    @property
    def total_value(self) -> float:
        return self.total.item()


def ctc_compress(states: Tensor, ctc_argmax: np.ndarray):
    """Merge consecutive positions sharing the same greedy CTC symbol into
    their arithmetic mean. Blank groups are merged like any other (kept, not
    dropped). Returns (compressed states, (start, end) group tuple)."""
    ctc_argmax = np.asarray(ctc_argmax)
    if len(ctc_argmax) != states.data.shape[0]:
        raise nn.DimMismatch("argmax length does not match state count")
    groups: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(ctc_argmax)):
        if ctc_argmax[i] != ctc_argmax[i - 1]:
            groups.append((start, i))
            start = i
    groups.append((start, len(ctc_argmax)))
    return nt.segment_mean(states, groups), tuple(groups)


class _FeedForward:
    def __init__(self, name, dim, hidden, rng):
        self.lin1 = nn.Linear(f"{name}.lin1", dim, hidden, rng)
        self.lin2 = nn.Linear(f"{name}.lin2", hidden, dim, rng)

    def __call__(self, x, p, rng):
        h = nt.silu(self.lin1(x))
        h = nt.dropout(h, p, rng) if rng is not None else h
        return self.lin2(h)

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()


class _Attention:
    def __init__(self, name, dim, heads, rng):
        self.heads = heads
        self.q = nn.Linear(f"{name}.q", dim, dim, rng)
        # A key bias shifts every score in a softmax row equally, so its
        # gradient is structurally zero; drop the unidentifiable parameter.
        self.k = nn.Linear(f"{name}.k", dim, dim, rng, bias=False)
        self.v = nn.Linear(f"{name}.v", dim, dim, rng)
        self.out = nn.Linear(f"{name}.out", dim, dim, rng)

    def __call__(self, x, memory=None, causal=False):
        mem = x if memory is None else memory
        att = nt.multi_head_attention(self.q(x), self.k(mem), self.v(mem),
                                      self.heads, causal=causal)
        return self.out(att)

    def parameters(self):
        return (self.q.parameters() + self.k.parameters()
                + self.v.parameters() + self.out.parameters())


class _ConvModule:
    """Pointwise expansion -> GLU -> depthwise conv -> SiLU -> pointwise."""

    def __init__(self, name, dim, kernel, rng):
        self.pw1 = nn.Linear(f"{name}.pw1", dim, 2 * dim, rng)
        self.dw = nn.DepthwiseConv1d(f"{name}.dw", dim, kernel, rng)
        self.pw2 = nn.Linear(f"{name}.pw2", dim, dim, rng)
        self.dim = dim

    def __call__(self, x):
        h = self.pw1(x)
        a = nt.narrow(h, 1, 0, self.dim)
        b = nt.narrow(h, 1, self.dim, self.dim)
        h = nt.mul(a, nt.sigmoid(b))
        h = nt.silu(self.dw(h))
        return self.pw2(h)

    def parameters(self):
        return self.pw1.parameters() + self.dw.parameters() + self.pw2.parameters()


class _EncoderBlock:
    """Conformer-style: half FFN, self-attention, conv module, half FFN,
    final norm. With use_conv_module=False it degrades to a plain
    pre-norm Transformer block (attention + one full FFN)."""

    def __init__(self, name, cfg: ModelConfig, rng):
        d = cfg.model_dim
        self.use_conv = cfg.use_conv_module
        if self.use_conv:
            self.ffn1_ln = nn.LayerNorm(f"{name}.ffn1_ln", d)
            self.ffn1 = _FeedForward(f"{name}.ffn1", d, cfg.ffn_dim, rng)
        self.attn_ln = nn.LayerNorm(f"{name}.attn_ln", d)
        self.attn = _Attention(f"{name}.attn", d, cfg.heads, rng)
        if self.use_conv:
            self.conv_ln = nn.LayerNorm(f"{name}.conv_ln", d)
            self.conv = _ConvModule(f"{name}.conv", d, cfg.conv_kernel, rng)
        self.ffn2_ln = nn.LayerNorm(f"{name}.ffn2_ln", d)
        self.ffn2 = _FeedForward(f"{name}.ffn2", d, cfg.ffn_dim, rng)
        self.final_ln = nn.LayerNorm(f"{name}.final_ln", d)

    def __call__(self, x, p, rng):
        def drop(t):
            return nt.dropout(t, p, rng) if rng is not None else t

        if self.use_conv:
            x = nt.add(x, nt.mul(drop(self.ffn1(self.ffn1_ln(x), p, rng)), 0.5))
        x = nt.add(x, drop(self.attn(self.attn_ln(x))))
        if self.use_conv:
            x = nt.add(x, drop(self.conv(self.conv_ln(x))))
            x = nt.add(x, nt.mul(drop(self.ffn2(self.ffn2_ln(x), p, rng)), 0.5))
        else:
            x = nt.add(x, drop(self.ffn2(self.ffn2_ln(x), p, rng)))
        return self.final_ln(x)

    def parameters(self):
        ps = []
        if self.use_conv:
            ps += self.ffn1_ln.parameters() + self.ffn1.parameters()
        ps += self.attn_ln.parameters() + self.attn.parameters()
        if self.use_conv:
            ps += self.conv_ln.parameters() + self.conv.parameters()
        ps += self.ffn2_ln.parameters() + self.ffn2.parameters()
        ps += self.final_ln.parameters()
        return ps


class _DecoderBlock:
    def __init__(self, name, cfg: ModelConfig, rng):
        d = cfg.model_dim
        self.self_ln = nn.LayerNorm(f"{name}.self_ln", d)
        self.self_attn = _Attention(f"{name}.self_attn", d, cfg.heads, rng)
        self.cross_ln = nn.LayerNorm(f"{name}.cross_ln", d)
        self.cross_attn = _Attention(f"{name}.cross_attn", d, cfg.heads, rng)
        self.ffn_ln = nn.LayerNorm(f"{name}.ffn_ln", d)
        self.ffn = _FeedForward(f"{name}.ffn", d, cfg.ffn_dim, rng)

    def __call__(self, y, enc_states, p, rng):
        def drop(t):
            return nt.dropout(t, p, rng) if rng is not None else t

        y = nt.add(y, drop(self.self_attn(self.self_ln(y), causal=True)))
        y = nt.add(y, drop(self.cross_attn(self.cross_ln(y), memory=enc_states)))
        y = nt.add(y, drop(self.ffn(self.ffn_ln(y), p, rng)))
        return y

    def parameters(self):
        return (self.self_ln.parameters() + self.self_attn.parameters()
                + self.cross_ln.parameters() + self.cross_attn.parameters()
                + self.ffn_ln.parameters() + self.ffn.parameters())


class Model:
    """Frozen-parameter inference is read-only and thread-safe; training
    mutates parameters from a single thread."""

    def __init__(self, config: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab,
                 seed: int = 0):
        if len(tgt_vocab) != config.vocab_size:
            raise ValueError(f"target vocab size {len(tgt_vocab)} != config "
                             f"{config.vocab_size}")
        if len(src_vocab) != config.src_vocab_size:
            raise ValueError(f"source vocab size {len(src_vocab)} != config "
                             f"{config.src_vocab_size}")
        if config.variant == "inline":
            from .tagset import TAG_TOKENS
            missing = [t for t in TAG_TOKENS if t not in tgt_vocab.token_to_id]
            if missing:
                raise ValueError(f"inline variant needs tag tokens in the target "
                                 f"vocab; missing {missing[:3]}...")
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        rng = rng_for(seed, "model-init")
        d = config.model_dim

        self.conv1 = nn.Conv1d("enc.sub1", config.feature_dim, d, kernel=3,
                               stride=2, rng=rng)
        self.conv2 = nn.Conv1d("enc.sub2", d, d, kernel=3, stride=2, rng=rng)
        self.enc_blocks = [_EncoderBlock(f"enc.block{i}", config, rng)
                           for i in range(config.enc_layers)]
        self.ctc_head = nn.Linear("enc.ctc_head", d, config.src_vocab_size + 1, rng)

        self.tok_emb = nn.Embedding("dec.tok_emb", config.vocab_size, d, rng)
        self.tag_emb = (nn.Embedding("dec.tag_emb", N_TAG_CLASSES, d, rng)
                        if config.variant == "parallel_emb" else None)
        self.dec_blocks = [_DecoderBlock(f"dec.block{i}", config, rng)
                           for i in range(config.dec_layers)]
        self.dec_ln = nn.LayerNorm("dec.final_ln", d)
        self.tok_head = nn.Linear("dec.tok_head", d, config.vocab_size, rng)
        self.tag_head = (nn.Linear("dec.tag_head", d, N_TAG_CLASSES, rng)
                         if config.variant in ("parallel", "parallel_emb") else None)

        self._params: list[Parameter] = []
        self._params += self.conv1.parameters() + self.conv2.parameters()
        for b in self.enc_blocks:
            self._params += b.parameters()
        self._params += self.ctc_head.parameters()
        self._params += self.tok_emb.parameters()
        if self.tag_emb is not None:
            self._params += self.tag_emb.parameters()
        for b in self.dec_blocks:
            self._params += b.parameters()
        self._params += self.dec_ln.parameters()
        self._params += self.tok_head.parameters()
        if self.tag_head is not None:
            self._params += self.tag_head.parameters()

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return self._params

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self._params}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for p in self._params:
            arr = state[p.name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.t.data = np.asarray(arr, dtype=np.float64).copy()

    # -- forward -----------------------------------------------------------

    def encode(self, features: np.ndarray, rng: np.random.Generator | None = None
               ) -> EncoderOutput:
        features = np.asarray(features, dtype=np.float64)
        t = features.shape[0]
        if t < self.config.subsample_factor:
            raise InputTooShort(f"need at least {self.config.subsample_factor} "
                                f"frames, got {t}")
        p = self.config.dropout
        x = nt.silu(self.conv1(Tensor(features)))
        x = nt.silu(self.conv2(x))
        x = nt.add(x, nn.sinusoidal_positions(x.data.shape[0], self.config.model_dim))
        if rng is not None:
            x = nt.dropout(x, p, rng)
        tap = self.config.resolved_tap()
        for block in self.enc_blocks[:tap]:
            x = block(x, p, rng)
        ctc_logits = self.ctc_head(x)
        argmax = ctc_logits.data.argmax(axis=-1)
        compressed, groups = ctc_compress(x, argmax)
        for block in self.enc_blocks[tap:]:
            compressed = block(compressed, p, rng)
        return EncoderOutput(compressed, ctc_logits, groups)

    def decoder_forward(self, token_ids: np.ndarray, tag_ids: np.ndarray | None,
                        enc_states: Tensor, rng: np.random.Generator | None = None):
        cfg = self.config
        token_ids = np.asarray(token_ids, dtype=np.int64)
        e = self.tok_emb(token_ids)
        if cfg.variant == "parallel_emb":
            if tag_ids is None or len(tag_ids) != len(token_ids):
                raise TagAlignmentMismatch(
                    f"parallel_emb needs one tag per previous token "
                    f"({None if tag_ids is None else len(tag_ids)} tags for "
                    f"{len(token_ids)} tokens)")
            e = nt.add(e, self.tag_emb(np.asarray(tag_ids, dtype=np.int64)))
        e = nt.mul(e, math.sqrt(cfg.model_dim))
        e = nt.add(e, nn.sinusoidal_positions(len(token_ids), cfg.model_dim))
        if rng is not None:
            e = nt.dropout(e, cfg.dropout, rng)
        for block in self.dec_blocks:
            e = block(e, enc_states, cfg.dropout, rng)
        e = self.dec_ln(e)
        tok_logits = self.tok_head(e)
        tag_logits = self.tag_head(e) if self.tag_head is not None else None
        return tok_logits, tag_logits

    def decode_step(self, enc: EncoderOutput, prev_tokens: np.ndarray,
                    prev_tags: np.ndarray | None = None) -> DecoderStepOutput:
        """Logits for the next token (and its category, on parallel
        variants) given the emitted prefix including BOS."""
        tok_logits, tag_logits = self.decoder_forward(
            prev_tokens, prev_tags if self.config.variant == "parallel_emb" else None,
            enc.states)
        last = len(prev_tokens) - 1
        tok = nt.reshape(nt.narrow(tok_logits, 0, last, 1), (self.config.vocab_size,))
        tag = (nt.reshape(nt.narrow(tag_logits, 0, last, 1), (N_TAG_CLASSES,))
               if tag_logits is not None else None)
        return DecoderStepOutput(tok, tag)

    # -- training ----------------------------------------------------------

    def encode_target(self, target: AnnotatedText):
        """(decoder input ids, output ids, tag input ids, tag output ids)
        for this variant. Tag sequences are None for inline."""
        v = self.tgt_vocab
        if self.config.variant == "inline":
            ids = v.encode(serialize_inline(target))
            tag_in = tag_out = None
        else:
            ids = v.encode(target.tokens)
            labels = [label_id(lab) for lab in to_token_labels(target)]
            tag_out = np.array(labels + [label_id("O")], dtype=np.int64)
            tag_in = np.concatenate(([label_id("O")], tag_out[:-1]))
        x_in = np.concatenate(([v.BOS], ids))
        y_out = np.concatenate((ids, [v.EOS]))
        return x_in, y_out, tag_in, tag_out

    def forward_training(self, features, target: AnnotatedText, source_tokens,
                         rng: np.random.Generator | None = None) -> LossBreakdown:
        cfg = self.config
        enc = self.encode(features, rng)
        src_ids = self.src_vocab.encode(source_tokens)
        ctc = nn.ctc_loss(enc.ctc_logits, src_ids)

        x_in, y_out, tag_in, tag_out = self.encode_target(target)
        tok_logits, tag_logits = self.decoder_forward(
            x_in, tag_in if cfg.variant == "parallel_emb" else None,
            enc.states, rng)
        ce = nn.label_smoothed_ce(tok_logits, y_out, cfg.label_smoothing)
        if tag_logits is not None:
            tag_ce = nn.label_smoothed_ce(tag_logits, tag_out, cfg.label_smoothing)
        else:
            tag_ce = None

        total = ce
        if cfg.lambda_ctc != 0.0:
            total = nt.add(total, nt.mul(ctc, cfg.lambda_ctc))
        if tag_ce is not None and cfg.lambda_tag != 0.0:
            total = nt.add(total, nt.mul(tag_ce, cfg.lambda_tag))
        return LossBreakdown(ce=ce.item(), ctc=ctc.item(),
                             tag_ce=0.0 if tag_ce is None else tag_ce.item(),
                             total=total)


# ---------------------------------------------------------------------------
# Checkpoints: nncore binary container; the header carries the config and
# both vocabularies so a checkpoint is self-contained.
# ---------------------------------------------------------------------------


def save_model(model: Model, path) -> None:
    cfg = model.config
    header: dict[str, str] = {}
    for f in fields(ModelConfig):
        header[f.name] = str(getattr(cfg, f.name))
    header["src_tokens"] = " ".join(model.src_vocab.id_to_token)
    tgt_entries = model.tgt_vocab.id_to_token[4:]  # strip the 4 specials
    header["tgt_tokens"] = " ".join(tgt_entries)
    arrays = [(p.name, p.data.astype(np.float32)) for p in model.parameters()]
    nn.save_checkpoint(path, header, arrays)


def load_model(path) -> Model:
    header, arrays = nn.load_checkpoint(path)
    kwargs = {}
    for f in fields(ModelConfig):
        raw = header[f.name]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("bool", bool):
            kwargs[f.name] = raw == "True"
        else:
            kwargs[f.name] = raw
    cfg = ModelConfig(**kwargs)
    src_vocab = Vocab(header["src_tokens"].split(), specials=False)
    tgt_vocab = Vocab(header["tgt_tokens"].split(), specials=True)
    model = Model(cfg, src_vocab, tgt_vocab, seed=0)
    model.load_state_dict(arrays)
    return model


def config_for_variant(cfg: ModelConfig, variant: str, base_vocab: int) -> ModelConfig:
    """Same architecture with the variant switched; the inline variant's
    vocab grows by the 36 tag tokens over the shared base vocabulary."""
    vocab = base_vocab + 36 if variant == "inline" else base_vocab
    return replace(cfg, variant=variant, vocab_size=vocab)
