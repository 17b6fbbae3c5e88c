"""Single command-line entry point for the full experiment lifecycle:

    jstner gen-data  --out data/
    jstner train     --data data/ --out run/
    jstner decode    --data data/ --checkpoint run/model.jst --out run/
    jstner eval      --data data/ --hyp run/hyps.txt
    jstner simul     --data data/ --checkpoint run/model.jst --out run/
    jstner gradcheck --variant parallel_emb
    jstner compare   --out cmp/ --seeds 3 --variants inline,parallel,parallel_emb

Every config key can be set in an INI file (--config) or overridden with
--<key> <value>; --help lists all keys with their defaults. Exit codes:
1 usage error, 2 data/config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import DEFAULTS, ConfigError, ExperimentConfig, load_config
from .data import (CorruptFile, InvalidSpec, UnknownToken, build_vocabs,
                   gen_corpus, read_corpus, write_corpus)
from .decode import (beam_search, inline_step_overhead, read_hypotheses,
                     write_decode_outputs)
from .eval import corpus_bleu, ne_eval_report, ttest_mean_greater
from .model import VARIANTS, Model, load_model, save_model
from .nncore import CorruptCheckpoint, NonFiniteLoss, gradcheck
from .simul import (PolicyConfig, quality_latency_sweep, run_waitk,
                    write_sweep_csv, write_trace)
from .tagset import UnbalancedTag
from .train import DivergedLoss, token_accuracy, train
from .util import derive_seed, rng_for

USAGE_EXIT, CONFIG_EXIT, RUNTIME_EXIT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_options(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("config overrides")
    group.add_argument("--config", metavar="FILE", default=None,
                       help="INI config file (defaults apply when omitted)")
    for section, keys in DEFAULTS.items():
        for key, default in keys.items():
            group.add_argument(f"--{key}", metavar="V", default=None,
                               help=f"[{section}] default: {default}")


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    for section, keys in DEFAULTS.items():
        for key in keys:
            value = getattr(args, key, None)
            if value is not None:
                cfg.set(key, value)
    return cfg


def _load_data(path):
    data_dir = Path(path)
    if not data_dir.exists():
        raise CorruptFile(f"data directory {data_dir} does not exist")
    return read_corpus(data_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jstner", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    _add_config_options(p)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_options(p)

    p = sub.add_parser("decode", help="beam-decode a split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    _add_config_options(p)

    p = sub.add_parser("eval", help="score a hypothesis file against a split")
    p.add_argument("--data", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--out", default=None)
    _add_config_options(p)

    p = sub.add_parser("simul", help="wait-k sweep with latency metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    _add_config_options(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_config_options(p)

    p = sub.add_parser("compare",
                       help="train N seeds per variant, report means + significance")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variants", default="inline,parallel,parallel_emb")
    _add_config_options(p)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    corpus = gen_corpus(cfg.task_spec(), cfg.split_sizes(), cfg.len_range())
    out = Path(args.out)
    write_corpus(corpus, out)
    (out / "config_used.ini").write_text(cfg.dump(), encoding="utf-8")
    n_spans = sum(len(ex.target.spans) for ex in corpus.examples)
    print(f"wrote {len(corpus.examples)} utterances "
          f"({', '.join(f'{k}={len(v)}' for k, v in corpus.splits.items())}), "
          f"{n_spans} entity spans, to {out}")
    return 0


def _build_model(cfg: ExperimentConfig, corpus, variant=None, seed=None) -> Model:
    variant = variant or cfg.get("variant")
    src_v, tgt_v = build_vocabs(corpus, inline_tags=(variant == "inline"))
    mc = cfg.model_config(len(tgt_v), len(src_v), variant)
    return Model(mc, src_v, tgt_v, seed=cfg.seed if seed is None else seed)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    corpus = _load_data(args.data)
    model = _build_model(cfg, corpus)
    result = train(model, corpus, cfg.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.jst")
    result.write_log(out / "loss_log.csv")
    (out / "config_used.ini").write_text(cfg.dump(), encoding="utf-8")
    acc = token_accuracy(model, corpus.split("valid"))
    print(f"variant={model.config.variant} steps={result.steps_run} "
          f"best_valid={result.best_valid:.4f} valid_token_acc={acc:.4f}")
    print(f"checkpoint: {out / 'model.jst'}")
    return 0


def cmd_decode(args) -> int:
    cfg = _resolve_config(args)
    corpus = _load_data(args.data)
    model = load_model(args.checkpoint)
    beam = int(cfg.get("beam"))
    length_norm = bool(cfg.get("length_norm"))
    examples = corpus.split(args.split)
    results = [beam_search(model, ex.features, beam=beam, length_norm=length_norm)
               for ex in examples]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_decode_outputs(out / "hyps.txt", out / "steps.csv",
                         [ex.utt_id for ex in examples], results)
    targets = [ex.target for ex in examples]
    extra, base, rel = inline_step_overhead(targets)
    steps = sum(r.decoder_steps for r in results)
    print(f"decoded {len(results)} utterances with beam {beam}: "
          f"{steps} decoder steps")
    print(f"inline-vs-parallel overhead on this split: 2*spans={extra} over "
          f"{base} parallel steps = {100 * rel:.2f}% "
          f"(reference measurement on Europarl-ST was ~7%)")
    return 0


def cmd_eval(args) -> int:
    _resolve_config(args)  # validates overrides even though none are used
    corpus = _load_data(args.data)
    refs = [ex.target for ex in corpus.split(args.split)]
    hyps = read_hypotheses(args.hyp)
    if len(hyps) != len(refs):
        raise CorruptFile(f"hypothesis file has {len(hyps)} lines, split "
                          f"{args.split!r} has {len(refs)}")
    report = ne_eval_report(refs, hyps)
    bleu = corpus_bleu([r.tokens for r in refs], [h.tokens for h in hyps])
    print(f"bleu: {bleu:.2f}")
    for line in report.lines():
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(
            f"bleu: {bleu:.2f}\n" + "\n".join(report.lines()) + "\n",
            encoding="utf-8")
        with open(out / "confusion.csv", "w", encoding="utf-8") as fh:
            fh.write("true,pred,percent\n")
            for true_cat, row in report.confusion.items():
                for pred, pct in row.items():
                    fh.write(f"{true_cat},{pred},{pct:.4f}\n")
    return 0


def cmd_simul(args) -> int:
    cfg = _resolve_config(args)
    corpus = _load_data(args.data)
    model = load_model(args.checkpoint)
    examples = corpus.split(args.split)
    ks = cfg.sweep_ks()
    timer = time.perf_counter if bool(cfg.get("compute_aware")) else None
    chunk = int(cfg.get("chunk_ms"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = quality_latency_sweep(model, examples, ks, chunk_ms=chunk, timer=timer)
    write_sweep_csv(out / "sweep.csv", rows)
    n_trace = min(int(cfg.get("trace_count")), len(examples))
    for k in ks:
        trace_dir = out / f"traces_k{k}"
        trace_dir.mkdir(exist_ok=True)
        for ex in examples[:n_trace]:
            trace = run_waitk(model, ex.features,
                              PolicyConfig(k=k, chunk_ms=chunk), timer=timer)
            write_trace(trace_dir / f"{ex.utt_id}.tsv", trace)
    print("k,bleu,f1,laal_ideal,laal_wall,wait_share")
    for r in rows:
        print(f"{r.k},{r.bleu:.2f},{r.f1:.4f},{r.laal_ideal:.0f},"
              f"{r.laal_wall:.0f},{r.wait_share:.3f}")
    print("wait_share is the fraction of computation-aware latency due to "
          "waiting (a reference system measured ~53%)")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    # check all three variants unless one was requested explicitly
    variants = [cfg.get("variant")] if args.variant is not None else list(VARIANTS)
    failed = False
    for variant in variants:
        err = _gradcheck_variant(cfg, variant)
        status = "PASS" if err < 1e-4 else "FAIL"
        failed = failed or err >= 1e-4
        print(f"gradcheck {variant}: max relative error {err:.3e} "
              f"(gate 1e-4) {status}")
    return RUNTIME_EXIT if failed else 0


def _gradcheck_variant(cfg: ExperimentConfig, variant: str) -> float:
    from .data import TaskSpec

    spec = TaskSpec(src_vocab_size=10, n_entities=18, seed=cfg.seed,
                    noise_std=0.05)
    corpus = gen_corpus(spec, split_sizes=(3, 1, 1), len_range=(3, 5))
    src_v, tgt_v = build_vocabs(corpus, inline_tags=(variant == "inline"))
    mc = cfg.model_config(len(tgt_v), len(src_v), variant)
    # dropout must be off: finite differences need a deterministic loss
    from dataclasses import replace

    mc = replace(mc, dropout=0.0)
    model = Model(mc, src_v, tgt_v, seed=cfg.seed)
    ex = corpus.split("train")[0]

    def loss():
        return model.forward_training(ex.features, ex.target,
                                      ex.source_tokens).total

    # 5e-5 keeps the finite-difference cancellation noise of near-zero
    # gradient coordinates well under the 1e-4 gate
    return gradcheck(loss, model.parameters(), epsilon=5e-5,
                     max_coords_per_param=2, rng=rng_for(cfg.seed, "gradcheck"))


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    if args.seeds < 2:
        raise ConfigError("compare needs at least 2 seeds for significance")
    corpus = gen_corpus(cfg.task_spec(), cfg.split_sizes(), cfg.len_range())
    test_refs = [ex.target for ex in corpus.split("test")]
    beam = int(cfg.get("beam"))

    metrics = ("bleu", "ne_acc", "f1", "cat_acc")
    samples: dict[str, dict[str, list[float]]] = \
        {v: {m: [] for m in metrics} for v in variants}
    for variant in variants:
        for run_idx in range(args.seeds):
            run_seed = derive_seed(cfg.seed, f"compare-{variant}-{run_idx}")
            model = _build_model(cfg, corpus, variant, seed=run_seed)
            train(model, corpus, cfg.train_config(seed=run_seed))
            hyps = [beam_search(model, ex.features, beam=beam).annotated
                    for ex in corpus.split("test")]
            report = ne_eval_report(test_refs, hyps)
            bleu = corpus_bleu([r.tokens for r in test_refs],
                               [h.tokens for h in hyps])
            samples[variant]["bleu"].append(bleu)
            samples[variant]["ne_acc"].append(report.ne_accuracy)
            samples[variant]["f1"].append(report.f1)
            samples[variant]["cat_acc"].append(report.cat_accuracy)
            print(f"  run {variant}/{run_idx}: bleu={bleu:.2f} "
                  f"ne_acc={report.ne_accuracy:.4f} f1={report.f1:.4f} "
                  f"cat_acc={report.cat_accuracy:.4f}", flush=True)

    baseline = variants[0]
    lines = [f"baseline for significance: {baseline} "
             f"(dagger = mean significantly higher at alpha=0.05, "
             f"one-sided Student's t-test over {args.seeds} runs)",
             f"{'variant':<14}" + "".join(f"{m:>12}" for m in metrics)]
    for variant in variants:
        cells = []
        for m in metrics:
            mean = float(np.mean(samples[variant][m]))
            mark = ""
            if variant != baseline:
                try:
                    mark = "†" if ttest_mean_greater(
                        samples[variant][m], samples[baseline][m]).significant \
                        else ""
                except ValueError:
                    mark = ""
            cells.append(f"{mean:>11.3f}{mark or ' '}")
        lines.append(f"{variant:<14}" + "".join(cells))
    report_text = "\n".join(lines)
    print(report_text)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report_text + "\n", encoding="utf-8")
    with open(out / "compare.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,run,bleu,ne_acc,f1,cat_acc\n")
        for variant in variants:
            for i in range(args.seeds):
                fh.write(f"{variant},{i}," + ",".join(
                    f"{samples[variant][m][i]:.6f}" for m in metrics) + "\n")
    (out / "config_used.ini").write_text(cfg.dump(), encoding="utf-8")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "simul": cmd_simul,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error kind=Usage msg={e}", file=sys.stderr)
        return USAGE_EXIT
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CorruptFile, CorruptCheckpoint, InvalidSpec,
            UnbalancedTag, UnknownToken, FileNotFoundError) as e:
        print(f"error kind={type(e).__name__} msg={e}", file=sys.stderr)
        return CONFIG_EXIT
    except (DivergedLoss, NonFiniteLoss, ArithmeticError, ValueError) as e:
        print(f"error kind={type(e).__name__} msg={e}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
