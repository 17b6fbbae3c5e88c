"""Simultaneous inference: wait-k policy driven by CTC word detection,
READ/WRITE trace recording, and latency metrics.

The policy consumes audio in fixed chunks, re-encoding the consumed prefix
after every READ (no incremental encoder state; the re-encoding cost is
exactly what the wall clock should measure). A WRITE emits one target word;
inline tag tokens ride along with the adjacent word and neither count as
emitted words nor carry their own delay.

Two clocks per WRITE: ``ideal_ms`` is the audio consumed at emission;
``wall_ms`` is elapsed real time in a simulation where audio arrives in real
time and model computation takes its measured duration. Without a timer the
wall clock equals the ideal clock (instantaneous computation).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import Model
from .nncore import no_grad
from .tagset import (AnnotatedText, LABELS, from_token_labels, is_tag_token,
                     recover_inline)

FRAME_MS = 10  # one feature frame per 10 ms of audio


class EmptyTrace(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    k: int = 1
    chunk_ms: int = 500

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.chunk_ms <= 0 or self.chunk_ms % FRAME_MS != 0:
            raise ValueError(f"chunk_ms must be a positive multiple of {FRAME_MS}")


@dataclass(frozen=True)
class ReadAction:
    consumed_ms: float


@dataclass(frozen=True)
class WriteAction:
    word: str
    ideal_ms: float
    wall_ms: float


@dataclass
class SimulTrace:
    actions: list
    source_duration_ms: float
    raw_tokens: list[str]           # full hypothesis incl. tag tokens
    annotated: AnnotatedText
    truncated: bool = False

    def writes(self) -> list[WriteAction]:
        return [a for a in self.actions if isinstance(a, WriteAction)]


def detect_words(ctc_logits) -> int:
    """Word count by greedy CTC collapse: argmax, merge repeats, drop blanks.
    Every surviving symbol is one word on this task's atomic tokens."""
    from .nncore import Tensor

    data = ctc_logits.data if isinstance(ctc_logits, Tensor) else np.asarray(ctc_logits)
    blank = data.shape[-1] - 1
    argmax = data.argmax(axis=-1)
    count = 0
    prev = -1
    for sym in argmax:
        if sym != prev and sym != blank:
            count += 1
        prev = sym
    return count


def run_waitk(model: Model, features: np.ndarray, policy: PolicyConfig,
              max_len: int | None = None, timer=None) -> SimulTrace:
    """Wait-k loop: wait until the CTC detector has seen k more words than
    were emitted, then alternate WRITE (one word) and READ (one chunk).
    ``timer`` is a seconds-clock (e.g. time.perf_counter) enabling
    computation-aware wall delays; None means instantaneous computation."""
    total_frames = len(features)
    if total_frames < model.config.subsample_factor:
        from .model import InputTooShort
        raise InputTooShort(f"source has {total_frames} frames, need "
                            f"{model.config.subsample_factor}")
    duration_ms = total_frames * FRAME_MS
    chunk_frames = policy.chunk_ms // FRAME_MS
    limit = (4 * (-(-total_frames // 4)) + 10) if max_len is None else max_len

    v = model.tgt_vocab
    tokens = [v.BOS]
    tags = [0]
    words: list[WriteAction] = []
    actions: list = []
    consumed = 0
    wall_ms = 0.0
    emitted_words = 0
    detected = 0
    finished = False
    truncated = False
    enc = None

    def elapsed(fn):
        nonlocal wall_ms
        if timer is None:
            return fn()
        t0 = timer()
        out = fn()
        wall_ms += (timer() - t0) * 1000.0
        return out

    with no_grad():
        while not finished:
            source_done = consumed >= total_frames
            if not source_done and detected < emitted_words + policy.k:
                consumed = min(total_frames, consumed + chunk_frames)
                wall_ms = max(wall_ms, consumed * FRAME_MS)
                if consumed >= model.config.subsample_factor:
                    enc = elapsed(lambda: model.encode(features[:consumed]))
                    detected = detect_words(enc.ctc_logits)
                actions.append(ReadAction(consumed * FRAME_MS))
                continue
            # WRITE: step the decoder until one surface word (or EOS) appears
            while True:
                if len(tokens) - 1 >= limit:
                    finished = truncated = True
                    break
                out = elapsed(lambda: model.decode_step(
                    enc, np.array(tokens), np.array(tags)))
                tok = int(out.token_logits.data.argmax())
                tag = (int(out.tag_logits.data.argmax())
                       if out.tag_logits is not None else 0)
                tokens.append(tok)
                tags.append(tag)
                if tok == v.EOS:
                    finished = True
                    break
                tok_str = v.id_to_token[tok]
                if is_tag_token(tok_str):
                    continue
                emitted_words += 1
                action = WriteAction(tok_str, consumed * FRAME_MS, wall_ms)
                words.append(action)
                actions.append(action)
                break

    ids = tokens[1:]
    if ids and ids[-1] == v.EOS:
        ids = ids[:-1]
    raw = v.decode(ids)
    if model.config.variant == "inline":
        annotated, _ = recover_inline(raw)
    else:
        labels = [LABELS[t] for t in tags[1:1 + len(ids)]]
        annotated = from_token_labels(raw, labels)
    return SimulTrace(actions, duration_ms, raw, annotated, truncated)


def laal(trace: SimulTrace, ref_word_count: int, clock: str = "ideal") -> float:
    """Length-adaptive average lagging in milliseconds.

    LAAL = (1/tau) * sum_{i=1..tau} [ d_i - (i-1) * T / max(|ref|, |hyp|) ]
    where d_i is the chosen clock's delay of the i-th word, T the source
    duration, and tau the index of the first word whose *ideal* delay
    reaches T (the last word if none does).
    """
    if clock not in ("ideal", "wallclock"):
        raise ValueError(f"unknown clock {clock!r}")
    writes = trace.writes()
    if not writes:
        raise EmptyTrace("trace has no WRITE actions")
    t_total = trace.source_duration_ms
    denom = max(ref_word_count, len(writes))
    tau = len(writes)
    for i, w in enumerate(writes, start=1):
        if w.ideal_ms >= t_total:
            tau = i
            break
    delays = [w.ideal_ms if clock == "ideal" else w.wall_ms for w in writes[:tau]]
    return sum(d - (i * t_total / denom) for i, d in enumerate(delays)) / tau


@dataclass
class SweepRow:
    k: int
    bleu: float
    f1: float
    laal_ideal: float
    laal_wall: float
    wait_share: float


def quality_latency_sweep(model: Model, examples, ks, chunk_ms: int = 500,
                          timer=time.perf_counter) -> list[SweepRow]:
    """One row per k: BLEU and strict F1 of the wait-k hypotheses plus mean
    ideal / wall-clock LAAL and the share of wall latency spent waiting."""
    from .eval import corpus_bleu, strict_span_f1

    rows = []
    for k in ks:
        policy = PolicyConfig(k=k, chunk_ms=chunk_ms)
        ideal = []
        wall = []
        hyps = []
        for ex in examples:
            trace = run_waitk(model, ex.features, policy, timer=timer)
            if trace.writes():
                ideal.append(laal(trace, len(ex.target.tokens), "ideal"))
                wall.append(laal(trace, len(ex.target.tokens), "wallclock"))
            hyps.append(trace.annotated)
        refs = [ex.target for ex in examples]
        bleu = corpus_bleu([r.tokens for r in refs], [h.tokens for h in hyps])
        _, _, f1 = strict_span_f1(refs, hyps)
        mean_ideal = float(np.mean(ideal)) if ideal else 0.0
        mean_wall = float(np.mean(wall)) if wall else 0.0
        share = mean_ideal / mean_wall if mean_wall > 0 else 1.0
        rows.append(SweepRow(k, bleu, f1, mean_ideal, mean_wall, share))
    return rows


def write_trace(path, trace: SimulTrace):
    """One line per action: READ<TAB>ms or WRITE<TAB>word<TAB>ideal<TAB>wall."""
    with open(path, "w", encoding="utf-8") as fh:
        for a in trace.actions:
            if isinstance(a, ReadAction):
                fh.write(f"READ\t{a.consumed_ms:g}\n")
            else:
                fh.write(f"WRITE\t{a.word}\t{a.ideal_ms:g}\t{a.wall_ms:g}\n")


def write_sweep_csv(path, rows: list[SweepRow]):
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "bleu", "f1", "laal_ideal", "laal_wall",
                         "wait_share"])
        for r in rows:
            writer.writerow([r.k, f"{r.bleu:.4f}", f"{r.f1:.6f}",
                             f"{r.laal_ideal:.3f}", f"{r.laal_wall:.3f}",
                             f"{r.wait_share:.4f}"])
