'''Masked cosine scoring across shared embedding spaces.

Scores are plain cosine similarities computed at float64. Cells that cannot
be scored (a side is missing the modality, or no space covers the pair)
carry the sentinel value -1 and are flagged in an explicit `observed` grid;
downstream code must branch on the flag, never on the sentinel.
'''

import logging
from dataclasses import dataclass

import numpy as np

__all__ = [
    "UNOBSERVED",
    "SimilarityMatrix",
    "ScoreTable",
    "cosine_similarity",
    "cosine_table",
    "similarity_matrix",
    "pairwise_score_table",
]

logger = logging.getLogger(__name__)

UNOBSERVED = -1.0


@dataclass
class SimilarityMatrix:
    '''Per-modality-pair scores for one (query, reference) combination.

    values has shape (n_query_modalities, n_reference_modalities); observed
    is a boolean grid of the same shape. Unobserved cells hold UNOBSERVED.
    The optional modality name tuples label the grid axes.
    '''

    values: np.ndarray
    observed: np.ndarray
    query_modalities: tuple = None
    reference_modalities: tuple = None

    def __post_init__(self):
        if self.values.shape != self.observed.shape:
            raise ValueError("values and observed must share a shape")


@dataclass
class ScoreTable:
    '''Dense (queries x references) scores for one modality pair.'''

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.observed.shape:
            raise ValueError("values and observed must share a shape")


def cosine_table(query_rows: np.ndarray, reference_rows: np.ndarray) -> np.ndarray:
    '''Cosine similarity of every row pair, clamped to [-1, 1].

    Rows with zero norm score 0 against everything. The contraction goes
    through einsum so every output cell is reduced in the same order
    regardless of the block shape; the scalar path reuses this kernel on
    1x1 blocks, which is what makes bulk and scalar results identical.
    '''
    a = np.asarray(query_rows, dtype=np.float64)
    b = np.asarray(reference_rows, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(
            f"expected matching 2-D blocks, got {a.shape} and {b.shape}")
    dots = np.einsum("id,jd->ij", a, b, optimize=False)
    a_norm = np.sqrt(np.einsum("id,id->i", a, a, optimize=False))
    b_norm = np.sqrt(np.einsum("id,id->i", b, b, optimize=False))
    denom = a_norm[:, None] * b_norm[None, :]
    good = denom > 0.0
    if not good.all():
        logger.warning("degenerate embedding: %d zero-norm row pairs scored 0",
                       int((~good).sum()))
    out = np.zeros_like(dots)
    out[good] = dots[good] / denom[good]
    np.clip(out, -1.0, 1.0, out=out)
    return out


def cosine_similarity(u, v) -> float:
    '''Cosine similarity of two vectors in [-1, 1]; zero-norm input scores 0.'''
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ValueError(f"expected two equal-length vectors, got {u.shape} and {v.shape}")
    return float(cosine_table(u[None, :], v[None, :])[0, 0])


def pairwise_score_table(dataset, pair, query_ids, reference_ids) -> ScoreTable:
    '''Score one modality pair over explicit id lists.

    Args:
        dataset: A MultimodalDataset.
        pair: (query modality, reference modality); must be scoreable.
        query_ids / reference_ids: Index sequences into each side.

    Returns:
        ScoreTable with shape (len(query_ids), len(reference_ids)); cells
        where either side is missing the modality are unobserved.
    '''
    qmod, rmod = pair
    space = dataset.schema.space_for(qmod, rmod)
    if space is None:
        raise ValueError(f"pair ({qmod!r}, {rmod!r}) is not covered by any space")
    query_ids = np.asarray(query_ids, dtype=np.intp)
    reference_ids = np.asarray(reference_ids, dtype=np.intp)
    q = dataset.query_embeddings[(qmod, space.name)][query_ids]
    r = dataset.reference_embeddings[(rmod, space.name)][reference_ids]
    values = cosine_table(q, r)
    q_present = dataset.query_mask[query_ids, dataset.schema.query_modalities.index(qmod)]
    r_present = dataset.reference_mask[
        reference_ids, dataset.schema.reference_modalities.index(rmod)]
    observed = q_present[:, None] & r_present[None, :]
    values[~observed] = UNOBSERVED
    return ScoreTable(values, observed)


def similarity_matrix(dataset, query_index: int, reference_index: int) -> SimilarityMatrix:
    '''Modality-pair score grid for one query against one reference.'''
    qmods = dataset.schema.query_modalities
    rmods = dataset.schema.reference_modalities
    values = np.full((len(qmods), len(rmods)), UNOBSERVED)
    observed = np.zeros((len(qmods), len(rmods)), dtype=bool)
    for i, qmod in enumerate(qmods):
        for j, rmod in enumerate(rmods):
            if dataset.schema.space_for(qmod, rmod) is None:
                continue
            table = pairwise_score_table(
                dataset, (qmod, rmod), [query_index], [reference_index])
            if table.observed[0, 0]:
                values[i, j] = table.values[0, 0]
                observed[i, j] = True
    return SimilarityMatrix(values, observed, tuple(qmods), tuple(rmods))
