"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. Criterion 5 trains all
three variants on the default synthetic corpus from scratch; on one CPU
core the whole module takes roughly half an hour.
"""

import itertools
import math
import time

import numpy as np
import pytest
from conftest import random_annotated, tiny_model

from jstner.cli import main as cli_main
from jstner.config import ExperimentConfig
from jstner.data import TaskSpec, build_vocabs, gen_corpus
from jstner.decode import forced_decode, greedy_decode, inline_step_overhead
from jstner.eval import ne_eval_report, strict_span_f1, ttest_mean_greater
from jstner.model import Model, ModelConfig
from jstner.nncore import Tensor, TargetTooLong, ctc_loss
from jstner.simul import (SimulTrace, WriteAction, laal,
                          quality_latency_sweep)
from jstner.tagset import (AnnotatedText, NeSpan, parse_inline,
                           serialize_inline, to_token_labels,
                           from_token_labels)
from jstner.train import TrainConfig, token_accuracy, train
from jstner.util import rng_for


def report(num: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {num} {name}: {status}{suffix}")
    assert ok, f"criterion {num} {name} failed{suffix}"


# -- shared fixtures ---------------------------------------------------------

# Default synthetic corpus (spec-default sizes) and the toy training recipe
# frozen after the first oracle training run.
ACC_SEED = 7
ACC_TRAIN = dict(max_steps=3500, batch_size=16, eval_every=250,
                 peak_lr=0.004, warmup_steps=250, patience_epochs=5)


@pytest.fixture(scope="session")
def default_corpus():
    return gen_corpus(TaskSpec(seed=ACC_SEED), split_sizes=(8000, 500, 500),
                      len_range=(3, 12))


@pytest.fixture(scope="session")
def trained(default_corpus):
    """Each variant trained on the default corpus with the frozen toy
    config. Returns variant -> (model, steps_run, train_seconds)."""
    out = {}
    for variant in ("inline", "parallel", "parallel_emb"):
        src_v, tgt_v = build_vocabs(default_corpus,
                                    inline_tags=(variant == "inline"))
        cfg = ModelConfig(vocab_size=len(tgt_v), src_vocab_size=len(src_v),
                          variant=variant, dropout=0.0)
        model = Model(cfg, src_v, tgt_v, seed=ACC_SEED)
        t0 = time.perf_counter()
        result = train(model, default_corpus,
                       TrainConfig(seed=ACC_SEED, **ACC_TRAIN))
        out[variant] = (model, result.steps_run, time.perf_counter() - t0)
    return out


# -- 1: gradient integrity ---------------------------------------------------


def test_criterion_1_gradient_integrity():
    from jstner.cli import _gradcheck_variant

    cfg = ExperimentConfig()  # default toy model: 64 dim, 4+2 layers
    worst = {}
    ok = True
    for variant in ("inline", "parallel", "parallel_emb"):
        t0 = time.perf_counter()
        err = _gradcheck_variant(cfg, variant)
        dt = time.perf_counter() - t0
        worst[variant] = (err, dt)
        ok = ok and err < 1e-4 and dt < 60.0
    detail = ", ".join(f"{v}: {e:.2e} in {t:.1f}s" for v, (e, t) in worst.items())
    report(1, "gradient integrity", ok, detail)


# -- 2: CTC oracle equivalence ------------------------------------------------


def test_criterion_2_ctc_brute_force_exhaustive():
    t_start = time.perf_counter()
    rng = np.random.default_rng(ACC_SEED)
    checked = 0
    worst = 0.0
    ok = True
    for t, v in itertools.product(range(1, 7), range(1, 5)):
        blank = v
        logits = rng.normal(size=(t, v + 1))
        shifted = logits - logits.max(axis=-1, keepdims=True)
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
        # enumerate all (v+1)^t paths once, group total probability by the
        # collapsed label sequence
        paths = np.array(list(itertools.product(range(v + 1), repeat=t)))
        path_probs = probs[np.arange(t)[None, :], paths].prod(axis=1)
        totals: dict[tuple, float] = {}
        for path, p in zip(paths, path_probs):
            collapsed = []
            prev = -1
            for sym in path:
                if sym != prev and sym != blank:
                    collapsed.append(int(sym))
                prev = sym
            key = tuple(collapsed)
            totals[key] = totals.get(key, 0.0) + p
        for length in range(0, 4):
            for target in itertools.product(range(v), repeat=length):
                total = totals.get(target, 0.0)
                if total == 0.0:
                    with pytest.raises(TargetTooLong):
                        ctc_loss(Tensor(logits), list(target))
                else:
                    got = ctc_loss(Tensor(logits), list(target)).item()
                    diff = abs(got - (-math.log(total)))
                    worst = max(worst, diff)
                    ok = ok and diff < 1e-9
                checked += 1
    elapsed = time.perf_counter() - t_start
    ok = ok and elapsed < 10.0
    report(2, "CTC oracle equivalence", ok,
           f"{checked} cases, worst |diff| {worst:.2e}, {elapsed:.1f}s")


# -- 3: tag-scheme roundtrip ---------------------------------------------------


def test_criterion_3_tag_scheme_roundtrips():
    rng = np.random.default_rng(ACC_SEED + 1)
    vocab = [f"w{i}" for i in range(12)]
    ok = True
    for _ in range(10_000):
        a = random_annotated(rng, vocab, max_len=9)
        ok = ok and parse_inline(serialize_inline(a)) == a
        if not ok:
            break
    # label roundtrips under the no-adjacent-same-category restriction
    count = 0
    while count < 10_000 and ok:
        a = random_annotated(rng, vocab, max_len=9)
        adjacent_same = any(
            s1.end == s2.start and s1.category == s2.category
            for s1, s2 in zip(a.spans, a.spans[1:]))
        if adjacent_same:
            continue
        ok = ok and from_token_labels(a.tokens, to_token_labels(a)) == a
        count += 1
    report(3, "tag-scheme roundtrip", ok, "10000 + 10000 cases")


# -- 4: decode-step law ---------------------------------------------------------


def test_criterion_4_decode_step_law(default_corpus):
    m_inline = tiny_model("inline", seed=1)
    m_par = tiny_model("parallel", seed=1)
    surface = [t for t in m_par.tgt_vocab.id_to_token[4:]]
    rng = np.random.default_rng(ACC_SEED + 2)
    feats = rng_for(ACC_SEED, "acc4").normal(size=(16, 80))
    ok = True
    for _ in range(1000):
        target = random_annotated(rng, surface, max_len=7)
        s = len(target.spans)
        w = len(target.tokens)
        f_in = forced_decode(m_inline, feats, target)
        f_par = forced_decode(m_par, feats, target)
        ok = ok and (f_in.decoder_steps - f_par.decoder_steps == 2 * s)
        ok = ok and f_in.decoder_steps == w + 2 * s + 1
        if not ok:
            break
    targets = [ex.target for ex in default_corpus.split("test")]
    extra, base, rel = inline_step_overhead(targets)
    report(4, "decode-step law", ok,
           f"corpus overhead 2*spans/steps = {100 * rel:.2f}% on the synthetic "
           f"test set; the reference measurement on Europarl-ST was ~7% "
           f"(different corpus, no tolerance applied)")


# -- 5: end-to-end learnability -------------------------------------------------


def test_criterion_5_learnability(default_corpus, trained):
    details = []
    ok = True
    for variant, (model, steps, seconds) in trained.items():
        acc = token_accuracy(model, default_corpus.split("valid"))
        test = default_corpus.split("test")
        hyps = [greedy_decode(model, ex.features).annotated for ex in test]
        refs = [ex.target for ex in test]
        _, _, f1 = strict_span_f1(refs, hyps)
        good = acc >= 0.95 and f1 >= 0.90 and steps <= 5000 and seconds <= 900
        ok = ok and good
        details.append(f"{variant}: acc={acc:.4f} f1={f1:.4f} "
                       f"steps={steps} {seconds:.0f}s")
    report(5, "end-to-end learnability", ok, "; ".join(details))


# -- 6: metric fixtures ----------------------------------------------------------


def _fixture_20():
    """20 sentences with hand-computed metric values.

    Totals: 21 reference spans, 19 hypothesis spans, 16 matches (14 with the
    correct category); 18 of 21 reference entities translated.
    """
    refs, hyps = [], []

    def sent(ref_tokens, ref_spans, hyp_tokens, hyp_spans):
        refs.append(AnnotatedText(tuple(ref_tokens.split()),
                                  tuple(NeSpan(s, e, c) for s, e, c in ref_spans)))
        hyps.append(AnnotatedText(tuple(hyp_tokens.split()),
                                  tuple(NeSpan(s, e, c) for s, e, c in hyp_spans)))

    # 1-10: identical, one correct span each (LOC x4, ORG x3, DATE x2, PERSON)
    cats10 = ["LOC", "LOC", "LOC", "LOC", "ORG", "ORG", "ORG", "DATE",
              "DATE", "PERSON"]
    for i, cat in enumerate(cats10):
        sent(f"e{i} filler", [(0, 1, cat)], f"e{i} filler", [(0, 1, cat)])
    # 11: case-insensitive match, correct category
    sent("Paris is nice", [(0, 1, "LOC")], "PARIS is nice", [(0, 1, "LOC")])
    # 12: the P=1.0 / R=0.5 / F1=2/3 sentence (wrong category on the match)
    sent("Paris and UN", [(0, 1, "LOC"), (2, 3, "ORG")],
         "Paris and x", [(0, 1, "GPE")])
    # 13: translated but not recognized (recall miss, ne_acc hit)
    sent("five kilos left", [(0, 2, "QUANTITY")], "five kilos left", [])
    # 14: spurious hypothesis span (precision miss, no reference entities)
    sent("plain words here", [], "plain words here", [(1, 2, "ORG")])
    # 15: duplicate reference entities, hypothesis carries one
    sent("UN meets UN", [(0, 1, "ORG"), (2, 3, "ORG")],
         "UN meets x", [(0, 1, "ORG")])
    # 16: multiword entity, correct
    sent("in New York", [(1, 3, "GPE")], "in New York", [(1, 3, "GPE")])
    # 17: right tokens, wrong span boundary (surface mismatch)
    sent("at dawn today", [(1, 2, "TIME")], "at dawn today", [(1, 3, "TIME")])
    # 18: wrong surface translation
    sent("the games end", [(1, 2, "EVENT")], "the fest end", [(1, 2, "EVENT")])
    # 19: single-sample correct row
    sent("law nine applies", [(0, 2, "LAW")], "law nine applies", [(0, 2, "LAW")])
    # 20: single-sample wrong row (FAC predicted as LOC)
    sent("old bridge stands", [(0, 2, "FAC")], "old bridge stands",
         [(0, 2, "LOC")])
    return refs, hyps


def test_criterion_6_metric_fixtures():
    refs, hyps = _fixture_20()
    assert len(refs) == 20
    rep = ne_eval_report(refs, hyps)
    checks = {
        "precision": rep.precision == 16 / 19,
        "recall": rep.recall == 16 / 21,
        "f1": rep.f1 == pytest.approx(0.8, abs=1e-12),
        "ne_accuracy": rep.ne_accuracy == 18 / 21,
        "cat_accuracy": rep.cat_accuracy == 14 / 16,
        "loc_row": rep.confusion["LOC"] == {"LOC": 100 * 5 / 6,
                                            "GPE": 100 * 1 / 6},
        "fac_single_sample_row": rep.confusion["FAC"] == {"LOC": 100.0},
        "law_single_sample_row": rep.confusion["LAW"] == {"LAW": 100.0},
        "zero_tp_rows_omitted": all(c not in rep.confusion
                                    for c in ("QUANTITY", "TIME", "EVENT")),
    }
    # the isolated P=1.0/R=0.5/F1=2/3 case
    p, r, f1 = strict_span_f1([refs[11]], [hyps[11]])
    checks["isolated_case"] = (p, r) == (1.0, 0.5) and abs(f1 - 2 / 3) < 1e-12
    failed = [k for k, v in checks.items() if not v]
    report(6, "metric fixtures", not failed,
           f"all {len(checks)} hand-computed values exact" if not failed
           else f"failed: {failed}")


# -- 7: LAAL oracle ---------------------------------------------------------------


def test_criterion_7_laal_oracle():
    rng = np.random.default_rng(ACC_SEED + 3)
    ok = True
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 14))
        duration = float(rng.integers(400, 5000))
        ideal = np.sort(rng.uniform(0, duration * 1.15, size=n))
        wall = ideal + rng.uniform(0, 400, size=n)
        ref_n = int(rng.integers(1, 14))
        actions = [WriteAction(f"w{i}", float(d), float(w))
                   for i, (d, w) in enumerate(zip(ideal, wall))]
        trace = SimulTrace(actions, duration, [a.word for a in actions],
                           AnnotatedText(tuple(a.word for a in actions)))
        for clock in ("ideal", "wallclock"):
            got = laal(trace, ref_n, clock)
            tau = next((i + 1 for i, d in enumerate(ideal) if d >= duration), n)
            delays = (ideal if clock == "ideal" else wall)[:tau]
            denom = max(ref_n, n)
            want = sum(d - i * duration / denom
                       for i, d in enumerate(delays)) / tau
            diff = abs(got - want)
            worst = max(worst, diff)
            ok = ok and diff < 1e-9
    # the uniform k=1 micro trace: 4 words over 2000 ms
    micro = SimulTrace(
        [WriteAction(f"w{i}", 500.0 * (i + 1), 500.0 * (i + 1))
         for i in range(4)],
        2000.0, ["w0", "w1", "w2", "w3"],
        AnnotatedText(("w0", "w1", "w2", "w3")))
    ok = ok and laal(micro, 4, "ideal") == 500.0
    report(7, "LAAL oracle", ok,
           f"1000 random traces, worst |diff| {worst:.2e}; micro trace 500 ms")


# -- 8: simultaneous sweep shape ----------------------------------------------------


def test_criterion_8_sweep_shape(default_corpus, trained):
    model, _, _ = trained["parallel_emb"]
    examples = default_corpus.split("test")
    rows = quality_latency_sweep(model, examples, ks=(1, 2, 3),
                                 chunk_ms=500, timer=time.perf_counter)
    ideal = [r.laal_ideal for r in rows]
    nondecreasing = all(b >= a for a, b in zip(ideal, ideal[1:]))
    wall_ge = all(r.laal_wall >= r.laal_ideal for r in rows)
    ok = nondecreasing and wall_ge and len(rows) == 3
    detail = "; ".join(
        f"k={r.k}: ideal={r.laal_ideal:.0f}ms wall={r.laal_wall:.0f}ms "
        f"wait_share={r.wait_share:.2f}" for r in rows)
    report(8, "simultaneous sweep shape", ok,
           detail + " (reference observation: ~53% of computation-aware "
           "latency is wait time; reported, not asserted)")


# -- 9: significance machinery --------------------------------------------------------


def test_criterion_9_significance(tmp_path):
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = np.random.default_rng(ACC_SEED + 4)
    ok = True
    worst = 0.0
    for _ in range(200):
        a = list(rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(2, 9))))
        b = list(rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(2, 9))))
        got = ttest_mean_greater(a, b)
        want = scipy_stats.ttest_ind(a, b, equal_var=True, alternative="greater")
        worst = max(worst, abs(got.t - want.statistic), abs(got.p - want.pvalue))
        ok = ok and abs(got.t - want.statistic) < 1e-6 \
            and abs(got.p - want.pvalue) < 1e-6

    # compare over 3 seeds emits a dagger-marked table; tiny config for runtime
    out = tmp_path / "cmp"
    args = ["compare", "--out", str(out), "--seeds", "3",
            "--variants", "parallel,parallel_emb",
            "--src_vocab_size", "8", "--n_entities", "18", "--n_train", "32",
            "--n_valid", "8", "--n_test", "8", "--min_len", "3",
            "--max_len", "6", "--enc_layers", "2", "--dec_layers", "1",
            "--model_dim", "16", "--ffn_dim", "24", "--heads", "2",
            "--conv_kernel", "3", "--dropout", "0.0", "--max_steps", "6",
            "--batch_size", "8", "--eval_every", "3", "--warmup_steps", "4",
            "--beam", "2"]
    rc = cli_main(args)
    report_text = (out / "report.txt").read_text()
    csv_lines = (out / "compare.csv").read_text().splitlines()
    ok = ok and rc == 0
    ok = ok and "alpha=0.05" in report_text
    ok = ok and all(m in report_text for m in ("bleu", "ne_acc", "f1", "cat_acc"))
    ok = ok and csv_lines[0] == "variant,run,bleu,ne_acc,f1,cat_acc"
    ok = ok and len(csv_lines) == 1 + 2 * 3
    # dagger markers must agree with a recomputation from the per-run CSV
    samples = {}
    for line in csv_lines[1:]:
        variant, _, bleu, ne, f1, cat = line.split(",")
        samples.setdefault(variant, {"bleu": [], "ne_acc": [], "f1": [],
                                     "cat_acc": []})
        for key, val in zip(("bleu", "ne_acc", "f1", "cat_acc"),
                            (bleu, ne, f1, cat)):
            samples[variant][key].append(float(val))
    row = next(l for l in report_text.splitlines()
               if l.startswith("parallel_emb"))
    for idx, metric in enumerate(("bleu", "ne_acc", "f1", "cat_acc")):
        try:
            want_mark = ttest_mean_greater(samples["parallel_emb"][metric],
                                           samples["parallel"][metric]).significant
        except ValueError:
            want_mark = False
        cell = row[14 + idx * 12: 14 + (idx + 1) * 12]
        ok = ok and (("†" in cell) == want_mark)
    report(9, "significance machinery", ok,
           f"200 oracle comparisons, worst |diff| {worst:.2e}; "
           "compare report checked against per-run CSV")


# -- 10: determinism --------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    args_common = ["--src_vocab_size", "8", "--n_entities", "18",
                   "--n_train", "32", "--n_valid", "8", "--n_test", "8",
                   "--min_len", "3", "--max_len", "6", "--enc_layers", "2",
                   "--dec_layers", "1", "--model_dim", "16", "--ffn_dim", "24",
                   "--heads", "2", "--conv_kernel", "3", "--dropout", "0.1",
                   "--max_steps", "10", "--batch_size", "8",
                   "--eval_every", "5", "--warmup_steps", "4", "--beam", "3",
                   "--seed", "21"]
    outputs = []
    for run in ("a", "b"):
        base = tmp_path / run
        data = base / "data"
        model_dir = base / "run"
        dec = base / "dec"
        rep = base / "rep"
        assert cli_main(["gen-data", "--out", str(data)] + args_common) == 0
        assert cli_main(["train", "--data", str(data), "--out",
                         str(model_dir)] + args_common) == 0
        assert cli_main(["decode", "--data", str(data), "--checkpoint",
                         str(model_dir / "model.jst"), "--out", str(dec),
                         "--split", "test"] + args_common) == 0
        assert cli_main(["eval", "--data", str(data), "--hyp",
                         str(dec / "hyps.txt"), "--split", "test",
                         "--out", str(rep)] + args_common) == 0
        outputs.append({
            "checkpoint": (model_dir / "model.jst").read_bytes(),
            "loss_log": (model_dir / "loss_log.csv").read_text(),
            "hyps": (dec / "hyps.txt").read_text(),
            "steps": (dec / "steps.csv").read_text(),
            "report": (rep / "report.txt").read_text(),
        })
    ok = all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    diffs = [k for k in outputs[0] if outputs[0][k] != outputs[1][k]]
    report(10, "determinism", ok,
           "train+decode+eval bit-identical across reruns" if ok
           else f"differs: {diffs}")
