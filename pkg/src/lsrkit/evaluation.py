"""IR metrics (MRR@k, nDCG@k, Recall@k) over TREC-format runs and qrels.

File formats (whitespace-separated):
  qrels  ``qid 0 docname rel``
  run    ``qid Q0 docname rank score tag``

Metric conventions follow trec_eval: exponential nDCG gain 2^rel - 1 with
discount 1/log2(rank + 1), ideal DCG over all judged documents truncated
at the cutoff. Queries whose judgments contain no relevant document score
0 for MRR/nDCG but are dropped from Recall's mean. Run queries without
any judgments are skipped with a warning.
"""

from __future__ import annotations

import logging
import math

from .errors import ContractError, FormatError

logger = logging.getLogger(__name__)

Qrels = dict[str, dict[str, int]]
Run = dict[str, list[tuple[str, float]]]


def read_qrels(path) -> Qrels:
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 'qid 0 docname rel'")
            qid, _, doc, raw_rel = parts
            try:
                rel = int(raw_rel)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad relevance {raw_rel!r}") from None
            if rel < 0:
                raise FormatError(f"{path}:{lineno}: relevance must be >= 0")
            per_query = qrels.setdefault(qid, {})
            if doc in per_query:
                raise FormatError(f"{path}:{lineno}: duplicate judgment for ({qid}, {doc})")
            per_query[doc] = rel
    return qrels


def read_run(path) -> Run:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(
                    f"{path}:{lineno}: expected 'qid Q0 docname rank score tag'"
                )
            qid, _, doc, raw_rank, raw_score, _ = parts
            try:
                rank, score = int(raw_rank), float(raw_score)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score") from None
            rows.setdefault(qid, []).append((rank, doc, score))
    run: Run = {}
    for qid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        if [rank for rank, _, _ in entries] != list(range(1, len(entries) + 1)):
            raise FormatError(f"run ranks for query {qid} are not contiguous from 1")
        scores = [score for _, _, score in entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise FormatError(f"run scores for query {qid} increase with rank")
        run[qid] = [(doc, score) for _, doc, score in entries]
    return run


def write_run(path, run: Run, tag: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in run.items():
            for rank, (doc, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {doc} {rank} {score:.6f} {tag}\n")


def _evaluated_queries(run: Run, qrels: Qrels) -> list[str]:
    evaluated = [qid for qid in run if qid in qrels]
    skipped = len(run) - len(evaluated)
    if skipped:
        logger.warning("skipped %d run queries without judgments", skipped)
    if not evaluated:
        raise ContractError("no run query has judgments")
    return evaluated


def mrr_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """Mean reciprocal rank of the first relevant document within the top k."""
    total = 0.0
    queries = _evaluated_queries(run, qrels)
    for qid in queries:
        judged = qrels[qid]
        for rank, (doc, _) in enumerate(run[qid][:k], start=1):
            if judged.get(doc, 0) >= 1:
                total += 1.0 / rank
                break
    return total / len(queries)


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    total = 0.0
    queries = _evaluated_queries(run, qrels)
    for qid in queries:
        judged = qrels[qid]
        dcg = 0.0
        for rank, (doc, _) in enumerate(run[qid][:k], start=1):
            rel = judged.get(doc, 0)
            if rel > 0:
                dcg += (2.0**rel - 1.0) / math.log2(rank + 1)
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = sum(
            (2.0**rel - 1.0) / math.log2(rank + 1)
            for rank, rel in enumerate(ideal, start=1)
            if rel > 0
        )
        if idcg > 0.0:
            total += dcg / idcg
    return total / len(queries)


def recall_at_k(run: Run, qrels: Qrels, k: int = 1000) -> float:
    total = 0.0
    counted = 0
    skipped = 0
    for qid in _evaluated_queries(run, qrels):
        relevant = {doc for doc, rel in qrels[qid].items() if rel >= 1}
        if not relevant:
            skipped += 1
            continue
        retrieved = {doc for doc, _ in run[qid][:k]}
        total += len(relevant & retrieved) / len(relevant)
        counted += 1
    if skipped:
        logger.warning("recall: excluded %d queries with no relevant documents", skipped)
    if counted == 0:
        raise ContractError("no evaluated query has a relevant document")
    return total / counted


def evaluate(run: Run, qrels: Qrels, mrr_k=10, ndcg_k=10, recall_k=1000) -> dict[str, float]:
    return {
        f"MRR@{mrr_k}": mrr_at_k(run, qrels, mrr_k),
        f"nDCG@{ndcg_k}": ndcg_at_k(run, qrels, ndcg_k),
        f"Recall@{recall_k}": recall_at_k(run, qrels, recall_k),
    }
