import numpy as np
import pytest

from conformal_retrieval.dataset import (
    ModalitySchema,
    MultimodalDataset,
    RelevanceMap,
    SharedSpace,
)


@pytest.fixture
def tiny_dataset():
    '''3 queries x 2 references, two modalities, one space per modality.

    Query masks: q0 has both modalities, q1 only "a", q2 only "b".
    References have everything. Relevance: q0 -> r0, q1 -> r1, q2 -> none.
    '''
    schema = ModalitySchema(
        query_modalities=("a", "b"),
        reference_modalities=("a", "b"),
        spaces=(
            SharedSpace("s1", 3, ("a",), ("a",)),
            SharedSpace("s2", 2, ("b",), ("b",)),
        ),
    )
    return MultimodalDataset(
        schema=schema,
        query_embeddings={
            ("a", "s1"): np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            ("b", "s2"): np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
        },
        reference_embeddings={
            ("a", "s1"): np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            ("b", "s2"): np.array([[0.0, 1.0], [1.0, 0.0]]),
        },
        query_mask=np.array([[1, 1], [1, 0], [0, 1]], dtype=bool),
        reference_mask=np.array([[1, 1], [1, 1]], dtype=bool),
        relevance=RelevanceMap(3, 2, (frozenset({0}), frozenset({1}), frozenset())),
    )
