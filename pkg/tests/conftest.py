"""Shared helpers: small model/corpus constructors used across test modules."""

import numpy as np

from jstner.data import TaskSpec, Vocab, gen_corpus
from jstner.model import Model, ModelConfig


def tiny_config(variant="parallel_emb", base_vocab=16, **kw):
    defaults = dict(src_vocab_size=7, enc_layers=3, dec_layers=2, model_dim=16,
                    ffn_dim=24, heads=2, dropout=0.0, conv_kernel=3)
    defaults.update(kw)
    vocab = base_vocab + 36 if variant == "inline" else base_vocab
    return ModelConfig(vocab_size=vocab, variant=variant, **defaults)


def tiny_model(variant="parallel_emb", seed=0, base_vocab=16, **kw):
    cfg = tiny_config(variant, base_vocab, **kw)
    src = Vocab([f"s{i}" for i in range(cfg.src_vocab_size)], specials=False)
    n_plain = cfg.vocab_size - 4 - (36 if variant == "inline" else 0)
    tokens = [f"t{i}" for i in range(n_plain)]
    if variant == "inline":
        from jstner.tagset import TAG_TOKENS
        tokens += list(TAG_TOKENS)
    tgt = Vocab(tokens, specials=True)
    return Model(cfg, src, tgt, seed=seed)


def small_corpus(seed=0, n=(30, 8, 8), len_range=(3, 7), **spec_kw):
    return gen_corpus(TaskSpec(seed=seed, **spec_kw), split_sizes=n,
                      len_range=len_range)


def random_annotated(rng: np.random.Generator, vocab_tokens, max_len=10):
    """Random AnnotatedText over the given surface tokens."""
    from jstner.tagset import CATEGORIES, AnnotatedText, NeSpan

    n = int(rng.integers(1, max_len + 1))
    tokens = tuple(vocab_tokens[int(rng.integers(len(vocab_tokens)))]
                   for _ in range(n))
    spans = []
    i = 0
    while i < n:
        if rng.random() < 0.4:
            end = int(rng.integers(i + 1, n + 1))
            spans.append(NeSpan(i, end, CATEGORIES[int(rng.integers(18))]))
            i = end + int(rng.integers(0, 2))
        else:
            i += 1
    return AnnotatedText(tokens, tuple(spans))
