'''Ranking references for queries with a calibrated model.

References are ordered by fused stage-one value (descending) because the
second stage is a monotone step function of it: sorting by the fused value
refines probability ties without ever contradicting the probabilities.
Ties break toward the smaller reference index. Combinations with no
observable modality pair sink to the tail with probability 0 and an
unanswerable flag.
'''

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import DataFormatError, _parse_float, _parse_int, _read_csv, atomic_write_text
from .pipeline import score_grid
from .similarity import pairwise_score_table

__all__ = [
    "RetrievalResult",
    "retrieve",
    "retrieve_shortlist",
    "batch_retrieve",
    "write_results_csv",
    "read_results_csv",
]

RESULTS_HEADER = ("query_id", "rank", "reference_id", "probability", "unanswerable")


@dataclass
class RetrievalResult:
    '''Ranked references for one query.

    ranked holds (reference_id, probability, unanswerable) triples, best
    first.
    '''

    query_index: int
    ranked: list


def _rank_rows(reference_ids, fused_row, prob_row, answerable_row, k):
    order = np.lexsort((reference_ids, -fused_row))
    if k is not None:
        order = order[:k]
    return [
        (int(reference_ids[j]), float(prob_row[j]), bool(~answerable_row[j]))
        for j in order
    ]


def retrieve(model, dataset, query_index: int, k=None) -> RetrievalResult:
    '''Rank every reference for one query.

    Args:
        model: Fitted CalibratedModel.
        dataset: Dataset with the matching schema fingerprint.
        query_index: Query to rank references for.
        k: Return only the best k entries; all references when None.

    Returns:
        RetrievalResult with probabilities non-increasing down the list.
    '''
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")
    probs, fused, answerable = score_grid(model, dataset, [query_index])
    refs = np.arange(dataset.n_references)
    return RetrievalResult(
        int(query_index), _rank_rows(refs, fused[0], probs[0], answerable[0], k))


def retrieve_shortlist(model, dataset, query_index: int, k: int,
                       alpha: float = 4.0) -> RetrievalResult:
    '''Rank only a shortlist of candidates gathered per modality pair.

    Each modality pair observable for the query nominates its top
    ceil(alpha * k) references by raw score; the union is then scored and
    ranked exactly like retrieve. With a budget covering every reference
    the result is identical to exact retrieval; smaller budgets trade
    recall for speed. May return fewer than k entries when the union is
    small. References with no observable pair at all stay out of the
    shortlist and are appended flagged, in index order, only when k
    exceeds the answerable count.

    Args:
        model: Fitted CalibratedModel.
        dataset: Dataset with the matching schema fingerprint.
        query_index: Query to rank references for.
        k: Number of results wanted.
        alpha: Over-fetch factor, at least 1.
    '''
    if k < 1:
        raise ValueError("k must be at least 1")
    if alpha < 1.0:
        raise ValueError("alpha must be at least 1")
    budget = math.ceil(alpha * k)
    qmods = dataset.schema.query_modalities
    rmods = dataset.schema.reference_modalities
    union = set()
    observable_any = np.zeros(dataset.n_references, dtype=bool)
    for qmod, rmod in model.first_stage:
        if not dataset.query_mask[query_index, qmods.index(qmod)]:
            continue
        cand = np.flatnonzero(dataset.reference_mask[:, rmods.index(rmod)])
        if cand.size == 0:
            continue
        observable_any[cand] = True
        table = pairwise_score_table(dataset, (qmod, rmod), [query_index], cand)
        top = np.lexsort((cand, -table.values[0]))[:budget]
        union.update(cand[top].tolist())
    entries = []
    if union:
        refs = np.asarray(sorted(union), dtype=np.intp)
        probs, fused, answerable = score_grid(model, dataset, [query_index], refs)
        entries = _rank_rows(refs, fused[0], probs[0], answerable[0], k)
    if k > int(observable_any.sum()):
        room = k - len(entries)
        tail = np.flatnonzero(~observable_any)[:room]
        entries.extend((int(r), 0.0, True) for r in tail)
    return RetrievalResult(int(query_index), entries)


def batch_retrieve(model, dataset, query_ids=None, k=None, mode: str = "exact",
                   shortlist_alpha: float = 4.0, workers: int = 1) -> list:
    '''Retrieve for many queries, optionally across threads.

    Results are independent per query, so the worker count never changes
    the output, only the wall time.

    Args:
        model: Fitted CalibratedModel.
        dataset: Dataset with the matching schema fingerprint.
        query_ids: Queries to process, in output order; all when None.
        k: Entries per query; all references when None.
        mode: "exact" or "shortlist".
        shortlist_alpha: Over-fetch factor for shortlist mode.
        workers: Thread count, at least 1.

    Returns:
        List of RetrievalResult aligned with query_ids.
    '''
    if mode not in ("exact", "shortlist"):
        raise ValueError(f"unknown retrieval mode {mode!r}")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if query_ids is None:
        query_ids = range(dataset.n_queries)
    if mode == "shortlist":
        if k is None:
            raise ValueError("shortlist mode needs k")

        def job(qi):
            return retrieve_shortlist(model, dataset, qi, k, shortlist_alpha)
    else:
        def job(qi):
            return retrieve(model, dataset, qi, k)

    ids = [int(qi) for qi in query_ids]
    if workers == 1:
        return [job(qi) for qi in ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, ids))


def write_results_csv(path, results):
    '''Write retrieval results with 1-based ranks and 17-digit floats.'''
    lines = [",".join(RESULTS_HEADER)]
    for res in results:
        for rank, (ref, prob, unanswerable) in enumerate(res.ranked, start=1):
            lines.append(
                f"{res.query_index},{rank},{ref},"
                f"{format(float(prob), '.17g')},{int(unanswerable)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_results_csv(path) -> list:
    '''Read a file written by write_results_csv.

    Rows for one query must be contiguous with ranks running 1, 2, ...;
    anything else raises DataFormatError.
    '''
    results = []
    seen = set()
    current = None
    for row in _read_csv(path, RESULTS_HEADER):
        qid = _parse_int(path, "query_id", row[0])
        rank = _parse_int(path, "rank", row[1])
        ref = _parse_int(path, "reference_id", row[2])
        prob = _parse_float(path, "probability", row[3])
        if row[4] not in ("0", "1"):
            raise DataFormatError(
                f"{path}: unanswerable must be 0 or 1, got {row[4]!r}")
        if current is None or current.query_index != qid:
            if qid in seen:
                raise DataFormatError(f"{path}: rows for query {qid} are split")
            seen.add(qid)
            current = RetrievalResult(qid, [])
            results.append(current)
        if rank != len(current.ranked) + 1:
            raise DataFormatError(
                f"{path}: query {qid} has rank {rank} where "
                f"{len(current.ranked) + 1} was expected")
        current.ranked.append((ref, prob, row[4] == "1"))
    return results
