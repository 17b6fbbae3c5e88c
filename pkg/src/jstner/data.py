"""Synthetic speech-to-tagged-translation task.

Each source token owns a fixed random 80-dim prototype; an utterance's
feature matrix repeats every token's prototype for a few frames (10 ms each)
plus Gaussian noise. Targets are dictionary translations of the source with
gold entity spans wherever an entity phrase from the lexicon was embedded.
The task is trivially separable at the configured noise level, which is what
makes end-to-end training converge in minutes on a CPU.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tagset import (CATEGORIES, AnnotatedText, NeSpan, parse_inline,
                     serialize_inline)
from .util import rng_for

FRAME_DIM = 80
FEATURE_MAGIC = b"JSTF"

SPLITS = ("train", "valid", "test")


class InvalidSpec(ValueError):
    pass


class CorruptFile(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class LexiconEntry:
    source: tuple[str, ...]
    target: tuple[str, ...]
    category: str


@dataclass(frozen=True)
class TaskSpec:
    """Generator parameters. All randomness derives from ``seed``."""

    src_vocab_size: int = 40        # plain (non-entity) source tokens
    n_entities: int = 36            # lexicon entries; >= 18 so every category occurs
    ne_rate: float = 0.22           # probability that a sentence unit is an entity
    frames_per_token: int = 8
    frame_jitter: int = 2           # uniform +/- jitter on frames per token
    noise_std: float = 0.1
    seed: int = 0
    rare_categories: tuple[str, ...] = ("FAC", "EVENT", "LAW")

    def __post_init__(self):
        if self.src_vocab_size < 1:
            raise InvalidSpec("src_vocab_size must be >= 1")
        if self.n_entities < len(CATEGORIES):
            raise InvalidSpec(f"n_entities must be >= {len(CATEGORIES)} so every "
                              "category appears in the lexicon")
        if not (0.0 <= self.ne_rate <= 1.0):
            raise InvalidSpec("ne_rate must be in [0, 1]")
        if self.frames_per_token - self.frame_jitter < 1:
            raise InvalidSpec("frames_per_token - frame_jitter must be >= 1")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be >= 0")
        for cat in self.rare_categories:
            if cat not in CATEGORIES:
                raise InvalidSpec(f"unknown rare category {cat!r}")


@dataclass(frozen=True, eq=False)
class Example:
    utt_id: str
    features: np.ndarray           # [T, 80] float32
    source_tokens: tuple[str, ...]
    target: AnnotatedText

    def __eq__(self, other):
        return (isinstance(other, Example)
                and self.utt_id == other.utt_id
                and np.array_equal(self.features, other.features)
                and self.source_tokens == other.source_tokens
                and self.target == other.target)


@dataclass
class SyntheticCorpus:
    examples: list[Example]
    splits: dict[str, list[int]]
    lexicon: tuple[LexiconEntry, ...]
    dictionary: dict[str, str] = field(default_factory=dict)

    def split(self, name: str) -> list[Example]:
        return [self.examples[i] for i in self.splits[name]]


class Vocab:
    """Token <-> id mapping. With specials, ids 0..3 are PAD/BOS/EOS/UNK."""

    PAD, BOS, EOS, UNK = 0, 1, 2, 3

    def __init__(self, tokens, specials: bool = True):
        self.specials = specials
        base = ["<pad>", "<bos>", "<eos>", "<unk>"] if specials else []
        self.id_to_token = base + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens) -> np.ndarray:
        try:
            return np.array([self.token_to_id[t] for t in tokens], dtype=np.int64)
        except KeyError as e:
            raise UnknownToken(f"token {e.args[0]!r} not in vocabulary") from e

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]


class UnknownToken(KeyError):
    pass


def _entity_weights(spec: TaskSpec, categories: list[str]) -> np.ndarray:
    # Zipf-like over entities with designated rare categories down-weighted,
    # so some confusion-matrix rows stay sparse.
    w = 1.0 / np.arange(1, len(categories) + 1)
    for i, cat in enumerate(categories):
        if cat in spec.rare_categories:
            w[i] *= 0.05
    return w / w.sum()


def build_lexicon(spec: TaskSpec) -> tuple[tuple[LexiconEntry, ...], dict[str, str]]:
    """Entity phrase table plus the bijective plain-token dictionary."""
    rng = rng_for(spec.seed, "lexicon")
    cats = list(CATEGORIES)
    rng.shuffle(cats)
    categories = [cats[i % len(cats)] for i in range(spec.n_entities)]
    entries = []
    for j, cat in enumerate(categories):
        length = int(rng.integers(1, 4))
        source = tuple(f"e{j}{chr(97 + p)}" for p in range(length))
        tgt_len = int(rng.integers(1, 4))
        target = tuple(f"E{j}{chr(97 + p)}" for p in range(tgt_len))
        entries.append(LexiconEntry(source, target, cat))
    dictionary = {f"s{i}": f"t{i}" for i in range(spec.src_vocab_size)}
    return tuple(entries), dictionary


def source_token_inventory(spec: TaskSpec) -> list[str]:
    lexicon, dictionary = build_lexicon(spec)
    tokens = sorted(dictionary)
    for entry in lexicon:
        tokens.extend(entry.source)
    return sorted(set(tokens))


def gen_corpus(spec: TaskSpec, split_sizes=(8000, 500, 500),
               len_range=(3, 12)) -> SyntheticCorpus:
    """Deterministic corpus: same spec (seed included) -> bit-identical output."""
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise InvalidSpec(f"bad len_range {len_range}")
    if min(split_sizes) < 1:
        raise InvalidSpec("every split must be non-empty")

    lexicon, dictionary = build_lexicon(spec)
    weights = _entity_weights(spec, [e.category for e in lexicon])
    protos = _prototypes(spec)

    rng = rng_for(spec.seed, "corpus")
    examples: list[Example] = []
    splits: dict[str, list[int]] = {}
    counter = 0
    for split, n in zip(SPLITS, split_sizes):
        idx = []
        for _ in range(n):
            utt_id = f"{split}-{counter:06d}"
            counter += 1
            ex = _gen_sentence(utt_id, spec, lexicon, weights, dictionary,
                               protos, rng, lo, hi)
            idx.append(len(examples))
            examples.append(ex)
        splits[split] = idx
    return SyntheticCorpus(examples, splits, lexicon, dictionary)


def _prototypes(spec: TaskSpec) -> dict[str, np.ndarray]:
    rng = rng_for(spec.seed, "prototypes")
    protos = {}
    for tok in source_token_inventory(spec):
        protos[tok] = rng.normal(size=FRAME_DIM)
    return protos


def _gen_sentence(utt_id, spec, lexicon, weights, dictionary, protos, rng, lo, hi):
    budget = int(rng.integers(lo, hi + 1))
    src: list[str] = []
    tgt: list[str] = []
    spans: list[NeSpan] = []
    plain = sorted(dictionary)
    last_entity_cat = None
    while len(src) < budget:
        remaining = budget - len(src)
        if rng.random() < spec.ne_rate:
            # Avoid adjacent same-category entities: per-token labels could
            # not represent them and cross-variant scoring would diverge.
            feasible = [i for i, e in enumerate(lexicon)
                        if len(e.source) <= remaining and e.category != last_entity_cat]
            if feasible:
                w = weights[feasible]
                entry = lexicon[feasible[int(rng.choice(len(feasible), p=w / w.sum()))]]
                start = len(tgt)
                src.extend(entry.source)
                tgt.extend(entry.target)
                spans.append(NeSpan(start, len(tgt), entry.category))
                last_entity_cat = entry.category
                continue
        tok = plain[int(rng.integers(len(plain)))]
        src.append(tok)
        tgt.append(dictionary[tok])
        last_entity_cat = None

    frames = []
    for tok in src:
        n = spec.frames_per_token + int(rng.integers(-spec.frame_jitter,
                                                     spec.frame_jitter + 1))
        block = np.tile(protos[tok], (n, 1))
        if spec.noise_std > 0:
            block = block + rng.normal(scale=spec.noise_std, size=block.shape)
        frames.append(block)
    features = np.concatenate(frames).astype(np.float32)
    target = AnnotatedText(tuple(tgt), tuple(spans))
    return Example(utt_id, features, tuple(src), target)


def build_vocabs(corpus: SyntheticCorpus, inline_tags: bool = False):
    """(source vocab without specials, target vocab with specials).

    Vocabularies come from the lexicon + dictionary, not from sampled
    sentences, so they are split-independent. With ``inline_tags`` the 36
    tag tokens are appended to the target vocabulary.
    """
    from .tagset import TAG_TOKENS

    src_tokens = sorted(set(corpus.dictionary)
                        | {t for e in corpus.lexicon for t in e.source})
    tgt_tokens = sorted(set(corpus.dictionary.values())
                        | {t for e in corpus.lexicon for t in e.target})
    if inline_tags:
        tgt_tokens = tgt_tokens + list(TAG_TOKENS)
    return Vocab(src_tokens, specials=False), Vocab(tgt_tokens, specials=True)


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------
# Manifest (one per split): TSV with utt_id, n_frames, source tokens,
# inline-tagged target. Features (one per split): magic JSTF then, per
# utterance in manifest order: u32 id length + id bytes, u32 n_frames,
# u32 dim, n_frames*dim little-endian float32.


def write_corpus(corpus: SyntheticCorpus, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for split in corpus.splits:
        exs = corpus.split(split)
        with open(path / f"{split}.tsv", "w", encoding="utf-8") as fh:
            for ex in exs:
                tagged = " ".join(serialize_inline(ex.target))
                fh.write(f"{ex.utt_id}\t{len(ex.features)}\t"
                         f"{' '.join(ex.source_tokens)}\t{tagged}\n")
        with open(path / f"{split}.feats", "wb") as fh:
            fh.write(FEATURE_MAGIC)
            for ex in exs:
                ident = ex.utt_id.encode("utf-8")
                fh.write(struct.pack("<I", len(ident)))
                fh.write(ident)
                fh.write(struct.pack("<II", ex.features.shape[0], ex.features.shape[1]))
                fh.write(np.ascontiguousarray(ex.features, dtype="<f4").tobytes())
    with open(path / "lexicon.tsv", "w", encoding="utf-8") as fh:
        for e in corpus.lexicon:
            fh.write(f"{' '.join(e.source)}\t{' '.join(e.target)}\t{e.category}\n")
    with open(path / "dictionary.tsv", "w", encoding="utf-8") as fh:
        for s, t in corpus.dictionary.items():
            fh.write(f"{s}\t{t}\n")


def read_corpus(path) -> SyntheticCorpus:
    path = Path(path)
    examples: list[Example] = []
    splits: dict[str, list[int]] = {}
    for split in SPLITS:
        manifest = path / f"{split}.tsv"
        if not manifest.exists():
            continue
        rows = []
        for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines()):
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorruptFile(f"{manifest}: line {line_no + 1} has "
                                  f"{len(parts)} fields, expected 4")
            utt_id, n_frames, src, tagged = parts
            rows.append((utt_id, int(n_frames), tuple(src.split()),
                         parse_inline(tagged.split())))
        feats = _read_features(path / f"{split}.feats")
        if len(feats) != len(rows):
            raise CorruptFile(f"{split}: manifest has {len(rows)} utterances, "
                              f"feature file has {len(feats)}")
        idx = []
        for (utt_id, n_frames, src, target), (feat_id, mat) in zip(rows, feats):
            if feat_id != utt_id:
                raise CorruptFile(f"{split}: feature id {feat_id!r} does not "
                                  f"match manifest id {utt_id!r}")
            if len(mat) != n_frames:
                raise CorruptFile(f"{split}/{utt_id}: manifest claims {n_frames} "
                                  f"frames, feature file has {len(mat)}")
            idx.append(len(examples))
            examples.append(Example(utt_id, mat, src, target))
        splits[split] = idx

    lexicon = []
    lex_path = path / "lexicon.tsv"
    if lex_path.exists():
        for line in lex_path.read_text(encoding="utf-8").splitlines():
            src, tgt, cat = line.split("\t")
            lexicon.append(LexiconEntry(tuple(src.split()), tuple(tgt.split()), cat))
    dictionary = {}
    dict_path = path / "dictionary.tsv"
    if dict_path.exists():
        for line in dict_path.read_text(encoding="utf-8").splitlines():
            s, t = line.split("\t")
            dictionary[s] = t
    return SyntheticCorpus(examples, splits, tuple(lexicon), dictionary)


def _read_features(fpath: Path) -> list[tuple[str, np.ndarray]]:
    blob = fpath.read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise CorruptFile(f"{fpath}: bad magic {blob[:4]!r}", 0)
    out = []
    offset = 4
    total = len(blob)
    while offset < total:
        if offset + 4 > total:
            raise CorruptFile(f"{fpath}: truncated id length", offset)
        (id_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        if offset + id_len + 8 > total:
            raise CorruptFile(f"{fpath}: truncated utterance header", offset)
        utt_id = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        n_frames, dim = struct.unpack_from("<II", blob, offset)
        offset += 8
        nbytes = 4 * n_frames * dim
        if offset + nbytes > total:
            raise CorruptFile(f"{fpath}: truncated features for {utt_id!r}", offset)
        mat = np.frombuffer(blob, dtype="<f4", count=n_frames * dim,
                            offset=offset).reshape(n_frames, dim).copy()
        offset += nbytes
        out.append((utt_id, mat))
    return out
