'''Two-stage calibration over cross-modal similarity scores.

Stage one fits one prediction band per scoreable modality pair, turning raw
cosine scores (whose ranges differ from pair to pair) into comparable
calibrated values. Those values are fused across the modality pairs actually
observed for a (query, reference) combination, and stage two fits a single
band on the fused values so the final output is again a calibrated
probability of relevance. Both stages use the same calibration queries.

The scalar path (score_pair) and the vectorized path (score_grid) perform
bit-for-bit identical arithmetic; tests assert exact equality. Keep the
accumulation order in fuse() and _fuse_tables() in sync when editing.
'''

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .conformal import (
    LabeledScore,
    PredictionBand,
    conformal_probability,
    fit_band_arrays,
)
from .dataset import DataFormatError, atomic_write_text
from .similarity import UNOBSERVED, pairwise_score_table, similarity_matrix

__all__ = [
    "Fuser",
    "ConformalMatrix",
    "CalibratedModel",
    "ModelDataMismatchError",
    "build_calibration_pairs",
    "fit_model",
    "conformal_matrix",
    "fuse",
    "score_pair",
    "score_grid",
    "save_model",
    "load_model",
]

MODEL_FILE_VERSION = 1


class ModelDataMismatchError(ValueError):
    '''A model is applied to a dataset with a different modality schema.'''


class Fuser(str, Enum):
    '''How per-modality-pair calibrated values are combined.'''

    MEAN = "mean"
    MAX = "max"


@dataclass
class ConformalMatrix:
    '''Stage-one calibrated values on the modality-pair grid.

    Same layout as SimilarityMatrix; a cell is observed only when the score
    was observable and the model carries a band for that modality pair.
    '''

    values: np.ndarray
    observed: np.ndarray
    query_modalities: tuple = None
    reference_modalities: tuple = None

    def __post_init__(self):
        if self.values.shape != self.observed.shape:
            raise ValueError("values and observed must share a shape")


@dataclass(frozen=True)
class CalibratedModel:
    '''Everything needed to score new (query, reference) combinations.

    Attributes:
        schema_fingerprint: Fingerprint of the schema the model was fitted
            on; scoring any other dataset is refused.
        fuser: Fusion rule applied between the two stages.
        first_stage: Mapping (query modality, reference modality) ->
            PredictionBand. Pairs that were not fittable are absent.
        pair_spaces: Mapping of the same keys to the shared-space name the
            scores came from.
        second_stage: Band fitted on the fused values.
    '''

    schema_fingerprint: str
    fuser: Fuser
    first_stage: dict
    pair_spaces: dict
    second_stage: PredictionBand

    def __post_init__(self):
        if not self.first_stage:
            raise ValueError("a model needs at least one first-stage band")
        if set(self.first_stage) != set(self.pair_spaces):
            raise ValueError("first_stage and pair_spaces must cover the same pairs")


def _validated_ids(ids, n: int, what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.intp)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"need at least one {what} id")
    if arr.min() < 0 or arr.max() >= n:
        raise ValueError(f"{what} id out of range [0, {n})")
    return arr


def _check_compatible(model: CalibratedModel, dataset):
    got = dataset.fingerprint()
    if model.schema_fingerprint != got:
        raise ModelDataMismatchError(
            f"model was fitted for schema {model.schema_fingerprint[:12]}..., "
            f"dataset has {got[:12]}...")


def build_calibration_pairs(dataset, calibration_ids, pair) -> list:
    '''Labeled calibration scores for one modality pair.

    Crosses every calibration query with every reference, keeps the
    combinations where both sides carry the modalities, and labels each
    score with relevance.

    Args:
        dataset: MultimodalDataset to read scores and relevance from.
        calibration_ids: Query indices reserved for calibration.
        pair: (query modality, reference modality).

    Returns:
        List of LabeledScore in (query-major, reference) order.
    '''
    ids = _validated_ids(calibration_ids, dataset.n_queries, "calibration query")
    table = pairwise_score_table(dataset, pair, ids, np.arange(dataset.n_references))
    labels = dataset.relevance.matrix()[ids]
    obs = table.observed
    return [
        LabeledScore(float(t), int(y))
        for t, y in zip(table.values[obs], labels[obs])
    ]


def fit_model(dataset, calibration_ids, fuser=Fuser.MEAN,
              negative_subsample=None) -> CalibratedModel:
    '''Fit both calibration stages on a held-out set of queries.

    Modality pairs with fewer than two observable calibration scores, or
    with all scores equal, cannot carry a band and are skipped.

    Args:
        dataset: MultimodalDataset with relevance labels.
        calibration_ids: Query indices to calibrate on (no duplicates).
        fuser: Fusion rule, a Fuser or its string value.
        negative_subsample: Optional (ratio, seed). Irrelevant combinations
            are kept with the given probability; relevant ones always stay.
            One draw per (query, reference) cell is shared by both stages.

    Returns:
        The fitted CalibratedModel.
    '''
    fuser = Fuser(fuser)
    cal = _validated_ids(calibration_ids, dataset.n_queries, "calibration query")
    if np.unique(cal).size != cal.size:
        raise ValueError("duplicate calibration query ids")
    labels = dataset.relevance.matrix()[cal]
    if negative_subsample is None:
        keep = np.ones(labels.shape, dtype=bool)
    else:
        ratio, seed = negative_subsample
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("negative subsample ratio must lie in [0, 1]")
        rng = np.random.default_rng(seed)
        keep = labels | (rng.random(labels.shape) < ratio)

    refs = np.arange(dataset.n_references)
    first_stage = {}
    pair_spaces = {}
    for pair in dataset.schema.scoreable_pairs():
        table = pairwise_score_table(dataset, pair, cal, refs)
        use = table.observed & keep
        theta = table.values[use]
        if theta.size < 2 or theta.min() == theta.max():
            continue
        first_stage[pair] = fit_band_arrays(theta, labels[use])
        pair_spaces[pair] = dataset.schema.space_for(*pair).name
    if not first_stage:
        raise ValueError(
            "no fittable modality pairs: every pair had fewer than two "
            "observable calibration scores or a degenerate score range")

    fused, answerable = _fuse_tables(first_stage, fuser, dataset, cal, refs)
    use = answerable & keep
    if np.count_nonzero(use) < 2:
        raise ValueError("second stage needs at least two fused calibration scores")
    second_stage = fit_band_arrays(fused[use], labels[use])
    return CalibratedModel(dataset.fingerprint(), fuser, first_stage,
                           pair_spaces, second_stage)


def conformal_matrix(model: CalibratedModel, sim) -> ConformalMatrix:
    '''Map a raw SimilarityMatrix through the stage-one bands cell by cell.'''
    if sim.query_modalities is None or sim.reference_modalities is None:
        raise ValueError("similarity matrix must carry modality names")
    values = np.full(sim.values.shape, UNOBSERVED)
    observed = np.zeros(sim.values.shape, dtype=bool)
    for i, qmod in enumerate(sim.query_modalities):
        for j, rmod in enumerate(sim.reference_modalities):
            band = model.first_stage.get((qmod, rmod))
            if band is None or not sim.observed[i, j]:
                continue
            values[i, j] = conformal_probability(band, float(sim.values[i, j]))
            observed[i, j] = True
    return ConformalMatrix(values, observed,
                           sim.query_modalities, sim.reference_modalities)


def fuse(conformal: ConformalMatrix, fuser):
    '''Combine the observed stage-one values into one score, or None.

    Unobserved cells never participate; a grid with nothing observed fuses
    to None. Accumulates left to right in row-major order so the result is
    bit-identical to the vectorized fusion in score_grid.
    '''
    fuser = Fuser(fuser)
    obs = np.asarray(conformal.observed, dtype=bool)
    if not obs.any():
        return None
    vals = np.asarray(conformal.values, dtype=np.float64)[obs]
    if fuser is Fuser.MEAN:
        total = 0.0
        for v in vals:
            total = total + float(v)
        return total / vals.size
    out = -math.inf
    for v in vals:
        out = max(out, float(v))
    return out


def _fuse_tables(first_stage, fuser, dataset, query_ids, reference_ids):
    '''Fused stage-one values for every (query, reference) cell.

    Returns:
        (fused, answerable): float grid with -inf where no modality pair was
        observable, and the matching boolean grid.
    '''
    shape = (len(query_ids), len(reference_ids))
    counts = np.zeros(shape)
    acc = np.zeros(shape) if fuser is Fuser.MEAN else np.full(shape, -np.inf)
    # iteration order == row-major grid order, matching fuse()
    for pair, band in first_stage.items():
        table = pairwise_score_table(dataset, pair, query_ids, reference_ids)
        obs = table.observed
        probs = conformal_probability(band, table.values)
        if fuser is Fuser.MEAN:
            acc[obs] += probs[obs]
        else:
            np.maximum(acc, np.where(obs, probs, -np.inf), out=acc)
        counts[obs] += 1.0
    answerable = counts > 0
    fused = np.full(shape, -np.inf)
    if fuser is Fuser.MEAN:
        np.divide(acc, counts, out=fused, where=answerable)
    else:
        fused[answerable] = acc[answerable]
    return fused, answerable


def score_pair(model: CalibratedModel, dataset, query_index: int,
               reference_index: int):
    '''Calibrated relevance probability for one combination.

    Returns:
        (probability, unanswerable). An unanswerable combination shares no
        observable modality pair; its probability is reported as 0.0.
    '''
    _check_compatible(model, dataset)
    sim = similarity_matrix(dataset, query_index, reference_index)
    fused = fuse(conformal_matrix(model, sim), model.fuser)
    if fused is None:
        return 0.0, True
    return conformal_probability(model.second_stage, fused), False


def score_grid(model: CalibratedModel, dataset, query_ids=None,
               reference_ids=None):
    '''Vectorized score_pair over a query x reference grid.

    Args:
        model: Fitted CalibratedModel.
        dataset: Dataset with the same schema fingerprint.
        query_ids: Query indices; all queries when None.
        reference_ids: Reference indices; all references when None.

    Returns:
        (probabilities, fused, answerable): probabilities are 0.0 and fused
        is -inf where a cell is unanswerable.
    '''
    _check_compatible(model, dataset)
    if query_ids is None:
        query_ids = np.arange(dataset.n_queries)
    else:
        query_ids = _validated_ids(query_ids, dataset.n_queries, "query")
    if reference_ids is None:
        reference_ids = np.arange(dataset.n_references)
    else:
        reference_ids = _validated_ids(reference_ids, dataset.n_references,
                                       "reference")
    fused, answerable = _fuse_tables(model.first_stage, model.fuser, dataset,
                                     query_ids, reference_ids)
    safe = np.where(answerable, fused, 0.0)
    probs = np.where(answerable,
                     conformal_probability(model.second_stage, safe), 0.0)
    return probs, fused, answerable


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

class _RawNumber(str):
    '''A pre-rendered JSON number, emitted without quotes.'''


def _render_float(x) -> _RawNumber:
    return _RawNumber(format(float(x), ".17g"))


def _emit(node, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(node, _RawNumber):
        return str(node)
    if isinstance(node, str):
        return json.dumps(node)
    if isinstance(node, bool):
        return "true" if node else "false"
    if isinstance(node, int):
        return str(node)
    if isinstance(node, dict):
        if not node:
            return "{}"
        inner = ",\n".join(
            f"{pad}  {json.dumps(k)}: {_emit(v, indent + 1)}"
            for k, v in node.items())
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(node, (list, tuple)):
        if all(isinstance(v, _RawNumber) for v in node):
            return "[" + ", ".join(node) + "]"
        inner = ",\n".join(f"{pad}  {_emit(v, indent + 1)}" for v in node)
        return "[\n" + inner + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(node).__name__}")


def _band_fields(band: PredictionBand) -> dict:
    return {
        "theta_min": _render_float(band.theta_min),
        "theta_max": _render_float(band.theta_max),
        "sorted_gamma": [_render_float(g) for g in band.sorted_gamma],
    }


def save_model(model: CalibratedModel, path):
    '''Write a model as JSON with floats at 17 significant digits.

    The float format round-trips every double exactly, so load_model
    restores the model bit for bit; byte output is deterministic.
    '''
    first_stage = []
    for (qmod, rmod), band in model.first_stage.items():
        entry = {
            "query_modality": qmod,
            "reference_modality": rmod,
            "space": model.pair_spaces[(qmod, rmod)],
        }
        entry.update(_band_fields(band))
        first_stage.append(entry)
    doc = {
        "version": MODEL_FILE_VERSION,
        "schema_fingerprint": model.schema_fingerprint,
        "fuser": model.fuser.value,
        "first_stage": first_stage,
        "second_stage": _band_fields(model.second_stage),
    }
    atomic_write_text(path, _emit(doc) + "\n")


def _parse_band(node, path) -> PredictionBand:
    if not isinstance(node, dict):
        raise DataFormatError(f"{path}: band entry must be an object")
    try:
        return PredictionBand(
            float(node["theta_min"]),
            float(node["theta_max"]),
            np.asarray(node["sorted_gamma"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad prediction band: {exc}") from exc


def load_model(path) -> CalibratedModel:
    '''Read a model written by save_model.

    Raises:
        DataFormatError: On unparseable JSON, an unsupported version, or
            band fields that fail validation.
    '''
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: expected a JSON object at top level")
    if doc.get("version") != MODEL_FILE_VERSION:
        raise DataFormatError(
            f"{path}: unsupported model version {doc.get('version')!r}")
    fingerprint = doc.get("schema_fingerprint")
    if not isinstance(fingerprint, str) or not fingerprint:
        raise DataFormatError(f"{path}: missing schema_fingerprint")
    try:
        fuser = Fuser(doc.get("fuser"))
    except ValueError as exc:
        raise DataFormatError(f"{path}: unknown fuser {doc.get('fuser')!r}") from exc
    entries = doc.get("first_stage")
    if not isinstance(entries, list) or not entries:
        raise DataFormatError(f"{path}: first_stage must be a non-empty list")
    first_stage = {}
    pair_spaces = {}
    for entry in entries:
        if not isinstance(entry, dict):
            raise DataFormatError(f"{path}: first_stage entries must be objects")
        try:
            key = (entry["query_modality"], entry["reference_modality"])
            space = entry["space"]
        except KeyError as exc:
            raise DataFormatError(f"{path}: band entry missing {exc}") from exc
        if key in first_stage:
            raise DataFormatError(f"{path}: duplicate band for pair {key}")
        first_stage[key] = _parse_band(entry, path)
        pair_spaces[key] = space
    if "second_stage" not in doc:
        raise DataFormatError(f"{path}: missing second_stage")
    second_stage = _parse_band(doc["second_stage"], path)
    return CalibratedModel(fingerprint, fuser, first_stage, pair_spaces,
                           second_stage)
