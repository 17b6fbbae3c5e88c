"""Entity and translation metrics.

Three entity aspects are scored, all on case-folded token-level surfaces:

* translation accuracy  -- the reference entity's surface occurs somewhere
                           in the hypothesis (multiset matching),
* strict span F1        -- a hypothesis span is correct only if an unmatched
                           reference span has the same surface; the category
                           is ignored at this stage,
* category accuracy     -- among matched span pairs, the fraction whose
                           categories agree, plus a row-normalized confusion
                           matrix in percent.

Plus corpus BLEU-4 for internal quality tracking and a one-sided pooled
Student's t-test for run comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .tagset import AnnotatedText, LengthMismatch, span_surface


class DegenerateSample(ValueError):
    pass


def _fold(tokens) -> tuple[str, ...]:
    return tuple(t.lower() for t in tokens)


def ne_translation_accuracy(refs: list[AnnotatedText], hyps) -> float:
    """Fraction of reference entities whose case-folded surface occurs as a
    contiguous token subsequence of the hypothesis. Hypothesis positions are
    consumed at most once, greedily left-to-right over references in start
    order, so duplicate entities need duplicate occurrences."""
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references vs {len(hyps)} hypotheses")
    matched = total = 0
    for ref, hyp_tokens in zip(refs, hyps):
        hyp = _fold(hyp_tokens)
        consumed = [False] * len(hyp)
        for sp in ref.spans:
            total += 1
            needle = _fold(ref.tokens[sp.start:sp.end])
            m = len(needle)
            for i in range(len(hyp) - m + 1):
                if any(consumed[i:i + m]):
                    continue
                if hyp[i:i + m] == needle:
                    consumed[i:i + m] = [True] * m
                    matched += 1
                    break
    return matched / total if total else 1.0


def span_matches(ref: AnnotatedText, hyp: AnnotatedText) -> list[tuple[str, str]]:
    """(true category, predicted category) pairs for hypothesis spans whose
    case-folded surface equals a not-yet-matched reference span's surface."""
    available = list(range(len(ref.spans)))
    pairs = []
    for hsp in hyp.spans:
        h_surface = span_surface(hyp, hsp).lower()
        for pos, ri in enumerate(available):
            rsp = ref.spans[ri]
            if span_surface(ref, rsp).lower() == h_surface:
                pairs.append((rsp.category, hsp.category))
                available.pop(pos)
                break
    return pairs


def strict_span_f1(refs: list[AnnotatedText], hyps: list[AnnotatedText]):
    """(precision, recall, f1). Zero denominators yield zero."""
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references vs {len(hyps)} hypotheses")
    tp = 0
    n_ref = sum(len(r.spans) for r in refs)
    n_hyp = sum(len(h.spans) for h in hyps)
    for ref, hyp in zip(refs, hyps):
        tp += len(span_matches(ref, hyp))
    precision = tp / n_hyp if n_hyp else 0.0
    recall = tp / n_ref if n_ref else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return precision, recall, f1


def category_metrics(pairs: list[tuple[str, str]]):
    """(category accuracy, confusion, per-true-category counts) over matched
    span pairs. Confusion rows are percentages summing to 100; categories
    without a matched pair are omitted."""
    counts: dict[str, int] = {}
    table: dict[str, dict[str, int]] = {}
    correct = 0
    for true_cat, pred_cat in pairs:
        counts[true_cat] = counts.get(true_cat, 0) + 1
        row = table.setdefault(true_cat, {})
        row[pred_cat] = row.get(pred_cat, 0) + 1
        if true_cat == pred_cat:
            correct += 1
    confusion = {
        true_cat: {pred: 100.0 * n / counts[true_cat]
                   for pred, n in sorted(row.items())}
        for true_cat, row in sorted(table.items())
    }
    accuracy = correct / len(pairs) if pairs else 0.0
    return accuracy, confusion, counts


@dataclass
class NeEvalReport:
    ne_accuracy: float
    precision: float
    recall: float
    f1: float
    cat_accuracy: float
    confusion: dict[str, dict[str, float]]
    counts: dict[str, int] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"ne_accuracy: {self.ne_accuracy:.4f}",
               f"precision: {self.precision:.4f}",
               f"recall: {self.recall:.4f}",
               f"f1: {self.f1:.4f}",
               f"cat_accuracy: {self.cat_accuracy:.4f}"]
        for true_cat, row in self.confusion.items():
            cells = " ".join(f"{p}={v:.1f}" for p, v in row.items())
            out.append(f"confusion[{true_cat}]: {cells}")
        return out


def ne_eval_report(refs: list[AnnotatedText], hyps: list[AnnotatedText]) -> NeEvalReport:
    ne_acc = ne_translation_accuracy(refs, [h.tokens for h in hyps])
    precision, recall, f1 = strict_span_f1(refs, hyps)
    pairs = []
    for ref, hyp in zip(refs, hyps):
        pairs.extend(span_matches(ref, hyp))
    cat_acc, confusion, counts = category_metrics(pairs)
    return NeEvalReport(ne_acc, precision, recall, f1, cat_acc, confusion, counts)


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


def _ngrams(tokens, n: int) -> dict[tuple, int]:
    out: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out


def corpus_bleu(refs: list, hyps: list) -> float:
    """Corpus BLEU-4 in [0, 100]: modified n-gram precisions with
    exponential smoothing for zero match counts, times brevity penalty."""
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references vs {len(hyps)} hypotheses")
    matched = [0] * 5
    total = [0] * 5
    ref_len = hyp_len = 0
    for ref, hyp in zip(refs, hyps):
        ref, hyp = list(ref), list(hyp)
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, 5):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            total[n] += max(len(hyp) - n + 1, 0)
            matched[n] += sum(min(c, ref_counts.get(g, 0))
                              for g, c in hyp_counts.items())
    if hyp_len == 0 or min(total[1:]) == 0:
        return 0.0
    smooth = 1.0
    log_sum = 0.0
    for n in range(1, 5):
        if matched[n] > 0:
            p = matched[n] / total[n]
        else:
            smooth *= 2.0
            p = 1.0 / (smooth * total[n])
        log_sum += math.log(p)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / 4.0)


# ---------------------------------------------------------------------------
# Significance
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    p_two_tail = _betainc(df / 2.0, 0.5, df / (df + t * t))
    return p_two_tail / 2.0 if t >= 0 else 1.0 - p_two_tail / 2.0


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool


def ttest_mean_greater(sample_a, sample_b, alpha: float = 0.05) -> TTestResult:
    """One-sided two-sample pooled-variance Student's t-test of
    H1: mean(a) > mean(b). ``significant`` is p < alpha."""
    a = [float(x) for x in sample_a]
    b = [float(x) for x in sample_b]
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least 2 values")
    m1 = sum(a) / n1
    m2 = sum(b) / n2
    s1 = sum((x - m1) ** 2 for x in a) / (n1 - 1)
    s2 = sum((x - m2) ** 2 for x in b) / (n2 - 1)
    df = n1 + n2 - 2
    sp2 = ((n1 - 1) * s1 + (n2 - 1) * s2) / df
    if sp2 == 0.0:
        if m1 == m2:
            raise DegenerateSample("all values identical in both samples")
        t = math.inf if m1 > m2 else -math.inf
    else:
        t = (m1 - m2) / math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2))
    p = _t_sf(t, df)
    return TTestResult(t, p, p < alpha)
