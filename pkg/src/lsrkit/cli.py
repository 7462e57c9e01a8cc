"""Command-line pipeline: build-vocab, train, encode, index, search, eval,
flops, gradcheck.

Exit codes: 0 success, 2 usage or bad configuration, 3 numeric failure,
4 artifact incompatibility, 5 malformed file.
"""

from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from . import autodiff as ad
from . import evaluation, text
from .backbones import BackboneConfig, Variant
from .errors import (
    CompatibilityError,
    ContractError,
    EmptyInputError,
    FormatError,
    LsrError,
    NumericError,
    SequenceLengthError,
    ShapeError,
    VocabError,
)
from .heads import HeadKind, read_vectors, write_vectors
from .index import build_index, flops_metric, load_index, save_index, top_k_search
from .model import SparseEncoder
from .training import ScoreStats, TrainConfig, normalize_teacher_scores, read_triplets, train

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_COMPAT = 4
EXIT_FORMAT = 5


def _cmd_build_vocab(args) -> int:
    corpus = text.read_tsv_texts(args.corpus)
    vocab = text.build_vocab(corpus, min_freq=args.min_freq)
    vocab.save(args.output)
    print(f"wrote {len(vocab)} ids ({len(vocab.tokens)} tokens) to {args.output}")
    return 0


def _require(section, key: str, cast=str):
    if key not in section:
        raise ContractError(f"missing config key [{section.name}] {key}")
    try:
        return cast(section[key])
    except ValueError:
        raise ContractError(f"bad value for config key [{section.name}] {key}") from None


def _load_train_config(path):
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ContractError(f"cannot read config file {path}")
    for section in ("backbone", "head", "train", "data"):
        if section not in parser:
            raise ContractError(f"missing config section [{section}]")
    backbone, head, trn, data = (
        parser["backbone"],
        parser["head"],
        parser["train"],
        parser["data"],
    )
    try:
        variant = Variant(_require(backbone, "variant"))
    except ValueError:
        raise ContractError(
            f"unknown backbone variant {backbone['variant']!r}; expected one of "
            + ", ".join(v.value for v in Variant)
        ) from None
    try:
        head_kind = HeadKind(_require(head, "kind"))
    except ValueError:
        raise ContractError(f"unknown head kind {head['kind']!r}") from None

    vocab = text.Vocabulary.load(_require(data, "vocab"))
    config = BackboneConfig(
        variant=variant,
        num_layers=_require(backbone, "num_layers", int),
        d_model=_require(backbone, "d_model", int),
        num_heads=_require(backbone, "num_heads", int),
        vocab_size=len(vocab),
        max_seq_len=_require(backbone, "max_seq_len", int),
        seed=_require(backbone, "seed", int),
    )
    train_cfg = TrainConfig(
        total_steps=_require(trn, "total_steps", int),
        learning_rate=_require(trn, "learning_rate", float),
        batch_size=_require(trn, "batch_size", int),
        warmup_steps=_require(trn, "warmup_steps", int),
        lambda_q=_require(trn, "lambda_q", float),
        lambda_d=_require(trn, "lambda_d", float),
        lambda_ramp_steps=_require(trn, "lambda_ramp_steps", int),
        seed=_require(trn, "seed", int),
        beta1=trn.getfloat("beta1", 0.9),
        beta2=trn.getfloat("beta2", 0.999),
        eps=trn.getfloat("eps", 1e-8),
        log_every=trn.getint("log_every", 100),
    )
    paths = {
        "triplets": _require(data, "triplets"),
        "checkpoint": _require(data, "checkpoint"),
        "metrics_log": _require(data, "metrics_log"),
    }
    ref_stats = None
    if "teacher_normalization" in parser:
        norm = parser["teacher_normalization"]
        ref_stats = ScoreStats(
            mean=_require(norm, "mean", float), std=_require(norm, "std", float)
        )
    pooling = head.get("pooling", "max")
    return vocab, config, head_kind, pooling, train_cfg, paths, ref_stats


def _cmd_train(args) -> int:
    vocab, config, head_kind, pooling, train_cfg, paths, ref_stats = _load_train_config(
        args.config
    )
    model = SparseEncoder.build(config, head_kind, pooling=pooling)
    triplets = read_triplets(paths["triplets"], vocab, config.max_seq_len)
    if ref_stats is not None:
        triplets = normalize_teacher_scores(triplets, ref_stats)
    reports = train(
        model,
        triplets,
        train_cfg,
        checkpoint_path=paths["checkpoint"],
        metrics_path=paths["metrics_log"],
        vocab_digest=vocab.digest(),
    )
    final = reports[-1]
    print(
        f"trained {train_cfg.total_steps} steps: loss {final.loss:.6f}, "
        f"doc density {final.density_d:.1f}; checkpoint at {paths['checkpoint']}"
    )
    return 0


def _cmd_encode(args) -> int:
    model, stored_digest = SparseEncoder.load(args.checkpoint)
    vocab = text.Vocabulary.load(args.vocab)
    if stored_digest and stored_digest != vocab.digest():
        raise CompatibilityError(
            "vocabulary digest does not match the one stored in the checkpoint"
        )
    records = text.read_tsv_texts(args.input)
    max_len = model.backbone.config.max_seq_len
    encoded = []
    for name, raw in records.items():
        tokens = text.tokenize(vocab, raw, max_len)
        if not tokens:
            raise EmptyInputError(f"{args.role} {name!r} tokenizes to zero tokens")
        encoded.append((name, model.encode(tokens)))
    write_vectors(args.output, encoded)
    print(f"encoded {len(encoded)} {args.role} records to {args.output}")
    return 0


def _cmd_index(args) -> int:
    docs = read_vectors(args.vectors)
    index = build_index(docs)
    save_index(index, args.output, quantize8=args.quantize8)
    print(
        f"indexed {index.doc_count} docs, {index.term_count} terms, "
        f"{index.posting_count} postings to {args.output}"
    )
    return 0


def _cmd_search(args) -> int:
    index = load_index(args.index)
    queries = read_vectors(args.queries)
    run = {qid: top_k_search(index, vec, args.k) for qid, vec in queries}
    evaluation.write_run(args.output, run, args.tag)
    print(f"searched {len(queries)} queries (k={args.k}) into {args.output}")
    return 0


def _cmd_eval(args) -> int:
    run = evaluation.read_run(args.run)
    qrels = evaluation.read_qrels(args.qrels)
    metrics = evaluation.evaluate(
        run, qrels, mrr_k=args.mrr_k, ndcg_k=args.ndcg_k, recall_k=args.recall_k
    )
    for name, value in metrics.items():
        print(f"{name}\t{value:.6f}")
    return 0


def _cmd_flops(args) -> int:
    index = load_index(args.index)
    queries = [vec for _, vec in read_vectors(args.queries)]
    print(f"FLOPs\t{flops_metric(queries, index):.6f}")
    return 0


def _gradcheck_cases(seed: int):
    rng = np.random.default_rng(seed)

    def away_from_kink(shape):
        x = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return ad.Tensor(x, requires_grad=True)

    b = ad.Tensor(rng.normal(size=(3, 2)))
    w = ad.Tensor(rng.normal(size=(4,)))
    w34 = ad.Tensor(rng.normal(size=(3, 4)))
    gain = ad.Tensor(np.ones(4))
    bias = ad.Tensor(np.zeros(4))
    cases = [
        ("matmul", lambda x: ad.sum_all(ad.matmul(x, b)), away_from_kink((2, 3))),
        ("relu", lambda x: ad.sum_all(ad.relu(x)), away_from_kink((5,))),
        (
            "log1p",
            lambda x: ad.sum_all(ad.log1p(x)),
            ad.Tensor(rng.uniform(-0.5, 2.0, size=(6,)), requires_grad=True),
        ),
        (
            "softmax_rows",
            lambda x: ad.sum_all(ad.mul(ad.softmax_rows(x), w34)),
            ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        ),
        (
            "max_over_axis",
            lambda x: ad.sum_all(ad.mul(ad.max_over_axis(x, 0)[0], w)),
            ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        ),
        (
            "layer_norm",
            lambda x: ad.sum_all(ad.mul(ad.layer_norm(x, gain, bias), w34)),
            ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        ),
        (
            "embedding_lookup",
            lambda x: ad.sum_all(ad.embedding_lookup(x, np.array([0, 2, 2, 1]))),
            ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True),
        ),
    ]
    return cases


def _cmd_gradcheck(args) -> int:
    failed = False
    for name, fn, x in _gradcheck_cases(args.seed):
        err = ad.finite_difference_check(fn, x, eps=1e-6)
        status = "ok" if err < 1e-5 else "FAIL"
        failed = failed or err >= 1e-5
        print(f"{name}\t{err:.3e}\t{status}")
    if failed:
        raise NumericError("finite-difference check failed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsrkit", description="Learned sparse retrieval pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="derive a vocabulary from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-freq", type=int, default=1)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from an INI config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("encode", help="encode texts into sparse vectors")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--role", choices=("query", "doc"), required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("index", help="build an inverted index from doc vectors")
    p.add_argument("--vectors", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--quantize8", action="store_true")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("search", help="top-k search; writes a TREC run file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--tag", default="lsrkit")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mrr-k", type=int, default=10)
    p.add_argument("--ndcg-k", type=int, default=10)
    p.add_argument("--recall-k", type=int, default=1000)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("flops", help="mean query-document term overlap of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


_EXIT_CODES = [
    (FormatError, EXIT_FORMAT),
    (CompatibilityError, EXIT_COMPAT),
    (NumericError, EXIT_NUMERIC),
    (
        (
            ContractError,
            VocabError,
            EmptyInputError,
            SequenceLengthError,
            ShapeError,
        ),
        EXIT_USAGE,
    ),
]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LsrError as exc:
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                print(f"lsrkit {args.command}: {exc}", file=sys.stderr)
                return code
        print(f"lsrkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lsrkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
