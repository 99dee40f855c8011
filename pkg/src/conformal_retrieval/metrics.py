'''Ranking quality metrics and score-agreement helpers.

Recall@k is a hit rate: the fraction of queries with at least one relevant
reference in the top k. Precision@k averages (#relevant in top k)/k, and
mean average precision at k divides by min(#relevant, k) so a perfect
prefix scores 1. A query with no relevant references contributes 0 to all
three means.
'''

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .pipeline import _RawNumber, _emit, _render_float
from .dataset import atomic_write_text

__all__ = [
    "MetricsReport",
    "ranking_metrics",
    "score_correlation",
    "write_report",
]


@dataclass
class MetricsReport:
    '''Aggregate ranking metrics at several cutoffs.

    Attributes:
        ks: Ascending cutoffs the metrics were computed at.
        recall_at: Mean recall@k per cutoff.
        precision_at: Mean precision@k per cutoff.
        map_at: Mean average precision at k per cutoff.
        query_count: Number of queries aggregated.
        answerable_query_count: Queries with at least one answerable entry.
    '''

    ks: tuple
    recall_at: dict
    precision_at: dict
    map_at: dict
    query_count: int
    answerable_query_count: int


def ranking_metrics(results, relevance, ks) -> MetricsReport:
    '''Aggregate ranking metrics over retrieval results.

    Args:
        results: Iterable of RetrievalResult (or anything exposing
            query_index and ranked the same way).
        relevance: RelevanceMap giving the relevant set per query.
        ks: Cutoffs, each between 1 and the reference count. Every result
            must carry at least max(ks) entries.

    Returns:
        MetricsReport with one value per cutoff.
    '''
    ks = tuple(sorted({int(k) for k in ks}))
    if not ks:
        raise ValueError("need at least one cutoff k")
    if ks[0] < 1:
        raise ValueError("every k must be at least 1")
    if ks[-1] > relevance.n_references:
        raise ValueError(
            f"k={ks[-1]} exceeds the reference count {relevance.n_references}")
    results = list(results)
    if not results:
        raise ValueError("need at least one retrieval result")
    max_k = ks[-1]
    recall_sum = dict.fromkeys(ks, 0.0)
    precision_sum = dict.fromkeys(ks, 0.0)
    ap_sum = dict.fromkeys(ks, 0.0)
    answerable = 0
    for res in results:
        qi = res.query_index
        if not 0 <= qi < relevance.n_queries:
            raise ValueError(f"query index {qi} outside [0, {relevance.n_queries})")
        refs = [r for r, _, _ in res.ranked]
        if len(refs) < max_k:
            raise ValueError(
                f"result for query {qi} has {len(refs)} entries, needs {max_k}")
        if len(set(refs)) != len(refs):
            raise ValueError(f"result for query {qi} has duplicate references")
        if any(not un for _, _, un in res.ranked):
            answerable += 1
        rel = relevance.relevant[qi]
        hit = np.array([r in rel for r in refs[:max_k]], dtype=np.float64)
        cum_hits = np.cumsum(hit)
        precision_prefix = cum_hits / np.arange(1, max_k + 1)
        ap_prefix = np.cumsum(precision_prefix * hit)
        for k in ks:
            if rel:
                # hit rate, not a proportion of the relevant set
                recall_sum[k] += 1.0 if cum_hits[k - 1] > 0 else 0.0
                ap_sum[k] += ap_prefix[k - 1] / min(len(rel), k)
            precision_sum[k] += cum_hits[k - 1] / k
    n = len(results)
    return MetricsReport(
        ks=ks,
        recall_at={k: recall_sum[k] / n for k in ks},
        precision_at={k: precision_sum[k] / n for k in ks},
        map_at={k: ap_sum[k] / n for k in ks},
        query_count=n,
        answerable_query_count=answerable,
    )


def score_correlation(x, y):
    '''Pearson and Spearman correlation between two score vectors.

    Ties get average ranks. Needs at least 3 finite values per side and
    nonzero variance in both.

    Returns:
        (pearson, spearman) as floats.
    '''
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("need two equal-length 1-d vectors of size >= 3")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("scores must be finite")
    if x.min() == x.max() or y.min() == y.max():
        raise ValueError("correlation is undefined for constant scores")
    pearson = float(np.corrcoef(x, y)[0, 1])
    spearman = float(np.corrcoef(rankdata(x), rankdata(y))[0, 1])
    return pearson, spearman


def write_report(report: MetricsReport, path):
    '''Write a MetricsReport as deterministic JSON (floats at 17 digits).'''
    doc = {
        "ks": [_RawNumber(str(int(k))) for k in report.ks],
        "recall_at": {str(k): _render_float(report.recall_at[k]) for k in report.ks},
        "precision_at": {str(k): _render_float(report.precision_at[k])
                         for k in report.ks},
        "map_at": {str(k): _render_float(report.map_at[k]) for k in report.ks},
        "query_count": report.query_count,
        "answerable_query_count": report.answerable_query_count,
    }
    atomic_write_text(path, _emit(doc) + "\n")
