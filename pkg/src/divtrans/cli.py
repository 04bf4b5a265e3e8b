"""``divtrans`` command-line entry point.

Every command accepts ``--config FILE`` (JSON) plus flag overrides; flags
win. Output files start with a header line carrying the tool version, a
digest of the effective configuration and the seed.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import analysis, artifact, backtrans, datagen, metrics
from .decoding import MODES, DecodePolicy, beam_search, decode_corpus, greedy_decode, strip_eos
from .errors import InvalidArgumentError, UndefinedDEQError
from .model import Checkpoint, ModelConfig, load_checkpoint, save_checkpoint
from .numerics import OptimizerConfig
from .training import TrainConfig, fit_corpus

log = logging.getLogger("divtrans")

RUN_DIR_ENV = "DIVTRANS_RUN_DIR"
DEFAULT_RUN_DIR = "runs/default"
EXIT_USAGE = 2
EXIT_RUNTIME = 3
MAX_OOV_FRACTION = 0.5


class UsageError(Exception):
    """Validation failure reported with exit code 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    run_dir: str = ""
    seed: int = 0

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e})") from e
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise UsageError(f"{path}: unknown config sections {sorted(extra)}")
        return cls(**raw)

    def model_kwargs(self) -> dict:
        kw = dict(self.model)
        bad = set(kw) - {f.name for f in fields(ModelConfig)} | ({"vocab_src", "vocab_tgt"} & set(kw))
        if bad:
            raise UsageError(f"unknown model settings {sorted(bad)}")
        return kw

    def optimizer_config(self) -> OptimizerConfig:
        kw = dict(self.optimizer)
        kw.setdefault("d_model", self.model.get("d_model", ModelConfig.__dataclass_fields__["d_model"].default))
        return OptimizerConfig(**kw)

    def train_config(self) -> TrainConfig:
        kw = {k: v for k, v in self.train.items() if k in ("steps", "batch_size", "log_every")}
        return TrainConfig(seed=self.seed, optimizer=self.optimizer_config(), **kw)

    def policy(self) -> DecodePolicy:
        kw = dict(self.decode)
        kw.setdefault("seed", self.seed)
        return DecodePolicy(**kw)

    def digest_dict(self) -> dict:
        d = asdict(self)
        d.pop("run_dir")
        return d

    def resolved_run_dir(self) -> Path:
        return Path(self.run_dir or os.environ.get(RUN_DIR_ENV) or DEFAULT_RUN_DIR)


def _set(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


def _apply_common(rc: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
    if getattr(args, "run_dir", None):
        rc.run_dir = args.run_dir
    return rc


def _apply_decode_flags(rc: RunConfig, args) -> None:
    d = rc.decode
    _set(d, "mode", args.mode)
    _set(d, "K", args.K)
    _set(d, "M", args.M)
    _set(d, "beam_size", args.beam)
    _set(d, "penalty_strength", args.penalty)
    _set(d, "max_len", args.max_len)
    _set(d, "alpha", args.alpha)
    if args.nbest:
        d["nbest"] = True
    if args.shared_sample:
        d["shared_sample"] = True
    if args.seed is not None:
        d["seed"] = args.seed


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _header(rc_digest: dict, seed: int) -> str:
    return artifact.artifact_header(artifact.config_digest(rc_digest), seed)


def _write_text(path: Path, header: str, body: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n" + body)


def _load_ckpt(path) -> Checkpoint:
    p = _require_file(path, "checkpoint")
    try:
        return load_checkpoint(p)
    except (InvalidArgumentError, ValueError, KeyError) as e:
        raise UsageError(f"{path}: unreadable checkpoint ({e})") from e


def _encode_inputs(ckpt: Checkpoint, sentences, allow_unk: bool) -> list[list[int]]:
    ids = [ckpt.src_vocab.encode(s) for s in sentences]
    total = sum(len(s) for s in ids)
    oov = sum(t == datagen.UNK for s in ids for t in s)
    if total and oov / total > MAX_OOV_FRACTION and not allow_unk:
        raise UsageError(f"input vocabulary does not match the checkpoint ({oov}/{total} tokens unknown)")
    return ids


def _check_model_section(rc: RunConfig, ckpt: Checkpoint) -> None:
    cfg = asdict(ckpt.model.config)
    for k, v in rc.model.items():
        if k in cfg and cfg[k] != v:
            raise UsageError(f"config sets model {k}={v} but the checkpoint has {cfg[k]}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.spec:
        spec = datagen.ToyTaskSpec.from_json(_require_file(args.spec, "spec file").read_text(encoding="utf-8"))
    else:
        spec = datagen.ToyTaskSpec()
    overrides = {"n_words": args.words, "synonyms": args.synonyms, "ambiguous_fraction": args.ambiguous,
                 "reorder_fraction": args.reorder, "min_len": args.min_len, "max_len": args.max_len,
                 "n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test, "seed": args.seed}
    spec = replace(spec, **{k: v for k, v in overrides.items() if v is not None})
    corpus = datagen.gen_corpus(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = artifact.artifact_header(artifact.config_digest(json.loads(spec.to_json())), spec.seed)
    pairs = corpus.pairs
    if args.reverse:
        pairs = datagen.reverse_corpus(corpus).pairs
    for name in ("train", "dev", "test"):
        datagen.write_pairs(out / f"{name}.tsv", [p for p, s in zip(pairs, corpus.splits) if s == name], header)
    (out / "spec.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    print(f"wrote {len(corpus)} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    rc = _apply_common(RunConfig.load(args.config), args)
    _set(rc.data, "train", args.train)
    _set(rc.data, "dev", args.dev)
    _set(rc.train, "steps", args.steps)
    _set(rc.train, "batch_size", args.batch_size)
    _set(rc.train, "checkpoint_every", args.checkpoint_every)
    train_path = _require_file(rc.data.get("train"), "training corpus")
    dev_path = _require_file(rc.data["dev"], "dev corpus") if rc.data.get("dev") else None
    try:
        model_kw = rc.model_kwargs()
        tcfg = rc.train_config()
    except (TypeError, InvalidArgumentError) as e:
        raise UsageError(f"invalid configuration: {e}") from e
    pairs = datagen.read_pairs(train_path)
    if not pairs:
        raise UsageError(f"{train_path}: empty corpus")
    run_dir = rc.resolved_run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = artifact.config_digest(rc.digest_dict())
    header = artifact.artifact_header(digest, rc.seed)
    every = int(rc.train.get("checkpoint_every", 0))
    meta = {"seed": rc.seed, "config_digest": digest, "train_steps": tcfg.steps}
    vocabs = (datagen.build_vocab(p[0] for p in pairs), datagen.build_vocab(p[1] for p in pairs))

    def on_step(step, loss, model):
        if every and step % every == 0 and step < tcfg.steps:
            save_checkpoint(run_dir / f"checkpoint-{step}.bin",
                            Checkpoint(model, *vocabs, dict(meta, train_steps=step)))

    ckpt, losses = fit_corpus(pairs, model_kw, tcfg, vocabs=vocabs, seed=rc.seed, on_step=on_step)
    ckpt.meta.update(meta)
    save_checkpoint(run_dir / "checkpoint.bin", ckpt)
    body = "step,loss,lr\n" + "".join(f"{s},{l:.6f},{r:.6e}\n" for s, l, r in losses)
    _write_text(run_dir / "loss.csv", header, body)
    print(f"checkpoint: {run_dir / 'checkpoint.bin'}")
    print(f"final loss: {losses[-1][1]:.4f}")
    if dev_path is not None:
        dev = datagen.read_pairs(dev_path)
        bleu = backtrans.evaluate_bleu(ckpt, dev, max_len=rc.decode.get("max_len", 50))
        print(f"dev greedy BLEU: {bleu:.2f}")
    return 0


def cmd_translate(args) -> int:
    rc = _apply_common(RunConfig.load(args.config), args)
    ckpt = _load_ckpt(args.checkpoint)
    _check_model_section(rc, ckpt)
    sources = datagen.read_sentences(_require_file(args.input, "input file"))
    ids = _encode_inputs(ckpt, sources, args.allow_unk)
    max_len = args.max_len or rc.decode.get("max_len", 50)
    lines = []
    for src in ids:
        if args.beam <= 1:
            out = greedy_decode(ckpt.model, src, max_len)
        else:
            out = beam_search(ckpt.model, src, DecodePolicy(beam_size=args.beam, max_len=max_len))[0].tokens
        lines.append(" ".join(ckpt.tgt_vocab.decode(out)))
    digest = {"command": "translate", "beam": args.beam, "max_len": max_len,
              "checkpoint": ckpt.meta.get("config_digest", "")}
    _emit(args.output, _header(digest, rc.seed), "".join(ln + "\n" for ln in lines))
    return 0


def _emit(path, header: str, body: str) -> None:
    if path:
        _write_text(Path(path), header, body)
    else:
        sys.stdout.write(header + "\n" + body)


def cmd_diverse_decode(args) -> int:
    rc = _apply_common(RunConfig.load(args.config), args)
    _apply_decode_flags(rc, args)
    try:
        policy = rc.policy()
    except (TypeError, InvalidArgumentError) as e:
        raise UsageError(f"invalid decoding settings: {e}") from e
    ckpt = _load_ckpt(args.checkpoint)
    _check_model_section(rc, ckpt)
    try:
        policy.check_model(ckpt.model)
    except InvalidArgumentError as e:
        raise UsageError(str(e)) from e
    sources = datagen.read_sentences(_require_file(args.input, "input file"))
    ids = _encode_inputs(ckpt, sources, args.allow_unk)
    record = bool(args.dump_attention)
    groups = decode_corpus(ckpt.model, ids, policy, workers=args.workers, record_attention=record)
    digest = {"command": "diverse-decode", "policy": asdict(policy),
              "checkpoint": ckpt.meta.get("config_digest", "")}
    header = _header(digest, policy.seed)
    records = []
    for g in groups:
        outs = [(" ".join(ckpt.tgt_vocab.decode(strip_eos(t))), s) for t, s in g.outputs]
        records.append(artifact.format_group(g.sentence_id, g.policy, outs))
    _emit(args.output, header, "".join(r + "\n" for r in records))
    if record:
        lines = []
        for g in groups:
            for m, att in enumerate(g.attention):
                if att is not None:
                    lines += artifact.attention_lines(g.sentence_id, m, att)
        _write_text(Path(args.dump_attention), header, "".join(ln + "\n" for ln in lines))
    return 0


def _read_references(path) -> list[list[tuple[str, ...]]]:
    refs = []
    for line in _require_file(path, "references file").read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        cols = cols[1:] if len(cols) > 1 else cols
        refs.append([tuple(c.split()) for c in cols])
    return refs


def _read_group_outputs(path) -> list[list[str]]:
    try:
        return [[t for t, _ in outs] for _, _, outs in artifact.read_groups(_require_file(path, "groups file"))]
    except (InvalidArgumentError, ValueError) as e:
        raise UsageError(f"{path}: {e}") from e


def _baseline_scores(path, refs) -> tuple[float, float]:
    lines = [ln for ln in _require_file(path, "baseline file").read_text(encoding="utf-8").splitlines()
             if ln and not ln.startswith("#")]
    if lines and lines[0].lstrip().startswith("{"):
        rep = metrics.MetricsReport.from_json(lines[0])
        return rep.rfb, rep.pwb
    groups = _read_group_outputs(path)
    if len(groups) != len(refs):
        raise UsageError(f"baseline has {len(groups)} groups but there are {len(refs)} references")
    return metrics.reference_bleu(groups, refs, "baseline_top"), metrics.pairwise_bleu(groups)


def _deq_table(args) -> int:
    with open(_require_file(args.table, "score table"), encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))]
    if not rows or not {"name", "rfb", "pwb"} <= set(rows[0]):
        raise UsageError(f"{args.table}: expected columns name,rfb,pwb")
    base = [r for r in rows if r["name"] == args.baseline_row]
    if not base:
        raise UsageError(f"{args.table}: no row named {args.baseline_row!r}")
    rfb_star, pwb_star = float(base[0]["rfb"]), float(base[0]["pwb"])
    out = ["name,rfb,pwb,deq"]
    for r in rows:
        if r is base[0]:
            continue
        try:
            value = f"{metrics.deq(rfb_star, pwb_star, float(r['rfb']), float(r['pwb'])):.2f}"
        except UndefinedDEQError:
            value = "undefined"
        out.append(f"{r['name']},{r['rfb']},{r['pwb']},{value}")
    digest = {"command": "eval-table", "baseline": args.baseline_row, "rows": rows}
    _emit(args.output, _header(digest, 0), "\n".join(out) + "\n")
    return 0


def cmd_eval(args) -> int:
    if args.table:
        return _deq_table(args)
    refs = _read_references(args.references)
    groups = _read_group_outputs(args.groups)
    if len(groups) != len(refs):
        raise UsageError(f"{args.groups} has {len(groups)} groups but {args.references} "
                         f"has {len(refs)} reference lines")
    if not groups:
        raise UsageError("nothing to evaluate")
    M = len(groups[0])
    rfb = metrics.reference_bleu(groups, refs, args.rfb_mode)
    pwb = metrics.pairwise_bleu(groups) if M >= 2 else None
    rfb_star = pwb_star = None
    if args.baseline:
        rfb_star, pwb_star = _baseline_scores(args.baseline, refs)
    report = metrics.MetricsReport.build(rfb, pwb, rfb_star, pwb_star, {"M": M, "rfb_mode": args.rfb_mode})
    print(report.to_table())
    if args.output:
        digest = {"command": "eval", "report": json.loads(report.to_json())}
        _write_text(Path(args.output), _header(digest, 0), report.to_json() + "\n")
    return 0


def cmd_analyze(args) -> int:
    rc = _apply_common(RunConfig.load(args.config), args)
    ckpt = _load_ckpt(args.checkpoint)
    base = _load_ckpt(args.baseline_checkpoint) if args.baseline_checkpoint else ckpt
    if base.src_vocab != ckpt.src_vocab or base.tgt_vocab != ckpt.tgt_vocab:
        raise UsageError("model and baseline checkpoints use different vocabularies")
    sources = datagen.read_sentences(_require_file(args.corpus, "corpus"))[: args.max_sentences]
    ids = _encode_inputs(ckpt, sources, args.allow_unk)
    stats = analysis.alignment_stats(ids, ckpt.model, base.model, max_len=args.max_len)
    H = ckpt.model.config.n_heads
    K = args.K if args.K is not None else math.ceil(H / 2)
    policy = DecodePolicy(mode="head_sample", K=K, M=args.M, beam_size=args.beam, max_len=args.max_len,
                          seed=rc.seed)
    groups = decode_corpus(ckpt.model, ids, policy, workers=args.workers)
    curve = analysis.length_diversity_curve(groups, [len(s) for s in ids], args.bucket_width)
    digest = {"command": "analyze", "policy": asdict(policy), "n": len(ids),
              "checkpoint": ckpt.meta.get("config_digest", ""), "baseline": base.meta.get("config_digest", "")}
    header = _header(digest, rc.seed)
    out = Path(args.out_dir) if args.out_dir else rc.resolved_run_dir()
    _write_text(out / "rank_histogram.csv", header, analysis.histogram_csv(stats))
    _write_text(out / "nll_table.csv", header, analysis.nll_table_csv(stats))
    _write_text(out / "length_curve.csv", header, analysis.length_curve_csv(curve))
    print(f"steps analysed: {stats.n_steps}; top-5 share {stats.fraction_within(5):.3f}; "
          f"head-average NLL {stats.head_average_nll:.3f}")
    return 0


def cmd_backtranslate(args) -> int:
    rc = _apply_common(RunConfig.load(args.config), args)
    _apply_decode_flags(rc, args)
    _set(rc.train, "steps", args.steps)
    _set(rc.train, "batch_size", args.batch_size)
    if args.plan:
        plan = backtrans.AugmentationPlan.from_json(_require_file(args.plan, "plan file").read_text(encoding="utf-8"))
    else:
        try:
            policy = rc.policy()
        except (TypeError, InvalidArgumentError) as e:
            raise UsageError(f"invalid decoding settings: {e}") from e
        targets = None
        if args.targets:
            targets = tuple(datagen.read_sentences(_require_file(args.targets, "targets file")))
        elif not args.train:
            raise UsageError("give --targets or --train (self back-translation)")
        plan = backtrans.AugmentationPlan(args.reverse_checkpoint, policy, targets, targets is None,
                                          args.ratio, args.output, args.workers)
    train_pairs = datagen.read_pairs(_require_file(args.train, "training corpus")) if args.train else []
    reverse = _load_ckpt(plan.reverse_checkpoint)
    syn = backtrans.synthesize_pairs(replace(plan, output=None), reverse, [t for _, t in train_pairs])
    # file locations and worker count do not change the synthetic corpus
    plan_fields = {k: v for k, v in json.loads(plan.to_json()).items()
                   if k not in ("output", "reverse_checkpoint", "workers")}
    digest = {"command": "backtranslate", "plan": plan_fields, "reverse": reverse.meta.get("config_digest", ""),
              "model": rc.model, "train": rc.train, "optimizer": rc.optimizer}
    header = _header(digest, plan.policy.seed)
    if plan.output:
        datagen.write_pairs(plan.output, syn.pairs, header, syn.splits)
    print(f"synthetic pairs: {len(syn)}")
    if args.retrain:
        if not train_pairs:
            raise UsageError("--retrain needs --train")
        test = datagen.read_pairs(_require_file(args.test, "test corpus")) if args.test else None
        try:
            ckpt, report = backtrans.mix_and_train(train_pairs, syn.pairs, plan.ratio, rc.model_kwargs(),
                                                   rc.train_config(), test, rc.seed)
        except InvalidArgumentError as e:
            raise UsageError(str(e)) from e
        run_dir = rc.resolved_run_dir()
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt.meta.update({"config_digest": artifact.config_digest(digest), "seed": rc.seed})
        save_checkpoint(run_dir / "checkpoint.bin", ckpt)
        _write_text(run_dir / "augment_report.json", header, json.dumps(report, sort_keys=True) + "\n")
        for k in sorted(report):
            print(f"{k}: {report[k]}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="global seed recorded in every output file")
    p.add_argument("--run-dir", help=f"output directory (default: ${RUN_DIR_ENV} or {DEFAULT_RUN_DIR})")


def _add_decode(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, help="decoding mode (default beam)")
    p.add_argument("--K", type=int, help="head-sampling vote threshold; 0 disables sampling")
    p.add_argument("--M", type=int, help="outputs per source sentence (default 5)")
    p.add_argument("--beam", type=int, help="beam size (default 5)")
    p.add_argument("--penalty", type=float, help="sibling or hamming penalty strength")
    p.add_argument("--max-len", type=int, help="maximum output length before a forced end token")
    p.add_argument("--alpha", type=float, help="length-normalisation exponent (default 0.6)")
    p.add_argument("--nbest", action="store_true", help="take the top-M of one search instead of M decodes")
    p.add_argument("--shared-sample", action="store_true",
                   help="one head draw per step shared by every confusing hypothesis")
    p.add_argument("--workers", type=int, default=1, help="decode worker processes (results do not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divtrans", description="Diverse translation by cross-attention head sampling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    p.add_argument("--spec", help="task spec JSON (flags override)")
    p.add_argument("--out-dir", required=True, help="directory for train/dev/test.tsv and spec.json")
    p.add_argument("--words", type=int, help="source vocabulary size")
    p.add_argument("--synonyms", type=int, help="target synonyms per ambiguous word")
    p.add_argument("--ambiguous", type=float, help="fraction of ambiguous source words")
    p.add_argument("--reorder", type=float, help="fraction of sentences with two clause blocks")
    p.add_argument("--min-len", type=int, help="minimum sentence length")
    p.add_argument("--max-len", type=int, help="maximum sentence length")
    p.add_argument("--n-train", type=int, help="training pairs")
    p.add_argument("--n-dev", type=int, help="dev pairs")
    p.add_argument("--n-test", type=int, help="test pairs")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--reverse", action="store_true", help="swap source and target columns")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a parallel corpus")
    _add_common(p)
    p.add_argument("--train", help="training corpus (source<TAB>target)")
    p.add_argument("--dev", help="dev corpus; greedy BLEU printed at the end")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--batch-size", type=int, help="sentences per batch")
    p.add_argument("--checkpoint-every", type=int, help="save an intermediate checkpoint every N steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="greedy or beam translation")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--input", required=True, help="one source sentence per line (or a corpus file)")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--beam", type=int, default=1, help="beam size; 1 means greedy")
    p.add_argument("--max-len", type=int, help="maximum output length")
    p.add_argument("--allow-unk", action="store_true", help="accept inputs that are mostly unknown words")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("diverse-decode", help="M outputs per sentence under a decoding policy")
    _add_common(p)
    _add_decode(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--input", required=True, help="one source sentence per line (or a corpus file)")
    p.add_argument("--output", help="group file (default stdout)")
    p.add_argument("--dump-attention", help="write per-step cross-attention as JSON lines to this file")
    p.add_argument("--allow-unk", action="store_true", help="accept inputs that are mostly unknown words")
    p.set_defaults(func=cmd_diverse_decode)

    p = sub.add_parser("eval", help="reference BLEU, pair-wise BLEU and DEQ")
    p.add_argument("--groups", help="group file from diverse-decode")
    p.add_argument("--references", help="references: one per line, or a corpus file (target columns)")
    p.add_argument("--baseline", help="baseline report JSON or baseline group file")
    p.add_argument("--rfb-mode", choices=("average_of_M", "baseline_top"), default="average_of_M",
                   help="reference-BLEU protocol for the system")
    p.add_argument("--table", help="CSV with name,rfb,pwb columns; prints DEQ of each row")
    p.add_argument("--baseline-row", default="Baseline", help="row of --table used as the baseline")
    p.add_argument("--output", help="write the report (JSON) or DEQ table (CSV) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="head-alignment statistics and the length-diversity curve")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="model under analysis")
    p.add_argument("--baseline-checkpoint", help="model translating referred words (default: same)")
    p.add_argument("--corpus", required=True, help="source sentences (or a corpus file)")
    p.add_argument("--out-dir", help="CSV directory (default: run directory)")
    p.add_argument("--max-sentences", type=int, default=None, help="analyse only the first N sentences")
    p.add_argument("--max-len", type=int, default=50, help="maximum output length")
    p.add_argument("--K", type=int, help="head-sampling threshold for the length curve (default ceil(H/2))")
    p.add_argument("--M", type=int, default=5, help="outputs per sentence for the length curve")
    p.add_argument("--beam", type=int, default=5, help="beam size for the length curve")
    p.add_argument("--bucket-width", type=int, default=1, help="source-length bucket width")
    p.add_argument("--workers", type=int, default=1, help="decode worker processes")
    p.add_argument("--allow-unk", action="store_true", help="accept inputs that are mostly unknown words")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("backtranslate", help="synthesize source sentences with a reverse model")
    _add_common(p)
    _add_decode(p)
    p.add_argument("--plan", help="augmentation plan JSON (replaces the policy flags)")
    p.add_argument("--reverse-checkpoint", help="target-to-source model")
    p.add_argument("--targets", help="monolingual target sentences")
    p.add_argument("--train", help="original corpus; its targets are reused when --targets is absent")
    p.add_argument("--test", help="held-out corpus for the retrained model")
    p.add_argument("--ratio", type=float, default=1.0, help="share of synthetic pairs mixed in")
    p.add_argument("--output", help="synthetic corpus file (source, target, origin)")
    p.add_argument("--retrain", action="store_true", help="train a forward model on the mixture")
    p.add_argument("--steps", type=int, help="optimizer steps for --retrain")
    p.add_argument("--batch-size", type=int, help="sentences per batch for --retrain")
    p.set_defaults(func=cmd_backtranslate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError) as e:
        print(f"divtrans {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"divtrans {args.command}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
