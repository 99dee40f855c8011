'''Dataset model and on-disk formats for multimodal retrieval.

A dataset couples per-space embedding matrices for both sides (queries and
references), presence masks saying which modalities each instance actually
has, and a relevance map. Embeddings are stored on disk as float32 and
promoted to float64 in memory; missing modalities are represented only by
the masks, never by zero vectors.
'''

import csv
import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataFormatError",
    "SharedSpace",
    "ModalitySchema",
    "RelevanceMap",
    "MultimodalDataset",
    "schema_fingerprint",
    "atomic_write_bytes",
    "write_embedding_file",
    "read_embedding_file",
    "write_mask_file",
    "read_mask_file",
    "write_relevance_pairs",
    "read_relevance_pairs",
    "read_positions",
    "relevance_from_positions",
    "apply_modality_dropout",
    "split_queries",
    "load_dataset",
    "save_dataset",
]

EMBEDDING_MAGIC = b"A2AE"
MASK_MAGIC = b"A2AM"
FORMAT_VERSION = 1

# magic | u16 version | u8 dtype | u8 pad | u64 rows | u64 dims
_EMB_HEADER = struct.Struct("<4sHBBQQ")
# magic | u16 version | u16 pad | u64 rows | u64 modalities
_MASK_HEADER = struct.Struct("<4sHHQQ")


class DataFormatError(ValueError):
    '''A file, manifest, or schema does not match the published format.'''


def atomic_write_bytes(path, data: bytes):
    '''Write bytes via a temp file in the same directory, then rename.'''
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharedSpace:
    '''One co-embedded space: a name, a dimension, and the modalities it
    covers on each side.'''

    name: str
    dim: int
    query_modalities: tuple = ()
    reference_modalities: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "query_modalities", tuple(self.query_modalities))
        object.__setattr__(self, "reference_modalities", tuple(self.reference_modalities))
        if self.dim < 1:
            raise DataFormatError(f"space {self.name!r}: dim must be >= 1")


@dataclass(frozen=True)
class ModalitySchema:
    '''Modality lists for both sides plus the shared spaces covering them.

    Every (query modality, reference modality) pair may be covered by at
    most one space; when several spaces cover the same pair, an explicit
    entry in pair_overrides must pick one.
    '''

    query_modalities: tuple
    reference_modalities: tuple
    spaces: tuple
    pair_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "query_modalities", tuple(self.query_modalities))
        object.__setattr__(self, "reference_modalities", tuple(self.reference_modalities))
        object.__setattr__(self, "spaces", tuple(self.spaces))
        object.__setattr__(
            self, "pair_overrides",
            {(q, r): name for (q, r), name in dict(self.pair_overrides).items()},
        )
        if not self.query_modalities or not self.reference_modalities:
            raise DataFormatError("schema needs modalities on both sides")
        for side, mods in (("query", self.query_modalities),
                           ("reference", self.reference_modalities)):
            if len(set(mods)) != len(mods):
                raise DataFormatError(f"duplicate {side} modality names")
        names = [s.name for s in self.spaces]
        if len(set(names)) != len(names):
            raise DataFormatError("duplicate space names")
        by_name = {s.name: s for s in self.spaces}
        for space in self.spaces:
            for mod in space.query_modalities:
                if mod not in self.query_modalities:
                    raise DataFormatError(
                        f"space {space.name!r} covers unknown query modality {mod!r}")
            for mod in space.reference_modalities:
                if mod not in self.reference_modalities:
                    raise DataFormatError(
                        f"space {space.name!r} covers unknown reference modality {mod!r}")
        pair_space = {}
        for qmod in self.query_modalities:
            for rmod in self.reference_modalities:
                covering = [
                    s for s in self.spaces
                    if qmod in s.query_modalities and rmod in s.reference_modalities
                ]
                if not covering:
                    continue
                if len(covering) == 1:
                    pair_space[(qmod, rmod)] = covering[0]
                    continue
                chosen = self.pair_overrides.get((qmod, rmod))
                if chosen is None:
                    raise DataFormatError(
                        f"ambiguous pair coverage for ({qmod!r}, {rmod!r}): "
                        f"spaces {[s.name for s in covering]}; add a pair_space override")
                if chosen not in {s.name for s in covering}:
                    raise DataFormatError(
                        f"pair_space override for ({qmod!r}, {rmod!r}) names "
                        f"{chosen!r} which does not cover the pair")
                pair_space[(qmod, rmod)] = by_name[chosen]
        for (qmod, rmod), name in self.pair_overrides.items():
            if (qmod, rmod) not in pair_space:
                raise DataFormatError(
                    f"pair_space override for uncovered pair ({qmod!r}, {rmod!r})")
        if not pair_space:
            raise DataFormatError("schema has no scoreable modality pair")
        object.__setattr__(self, "_pair_space", pair_space)

    def scoreable_pairs(self) -> tuple:
        '''Covered (query modality, reference modality) pairs in schema order.'''
        return tuple(
            (q, r)
            for q in self.query_modalities
            for r in self.reference_modalities
            if (q, r) in self._pair_space
        )

    def space_for(self, query_modality: str, reference_modality: str):
        '''The space scoring a pair, or None when the pair is not covered.'''
        return self._pair_space.get((query_modality, reference_modality))


def schema_fingerprint(schema: ModalitySchema) -> str:
    '''Stable digest of the schema structure, for model/data compatibility.'''
    payload = {
        "query_modalities": list(schema.query_modalities),
        "reference_modalities": list(schema.reference_modalities),
        "spaces": [
            {
                "name": s.name,
                "dim": s.dim,
                "query": list(s.query_modalities),
                "reference": list(s.reference_modalities),
            }
            for s in schema.spaces
        ],
        "pair_overrides": sorted(
            f"{q}:{r}={name}" for (q, r), name in schema.pair_overrides.items()
        ),
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Relevance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelevanceMap:
    '''Per-query sets of relevant reference indices.'''

    n_queries: int
    n_references: int
    relevant: tuple

    def __post_init__(self):
        object.__setattr__(self, "relevant", tuple(frozenset(s) for s in self.relevant))
        if len(self.relevant) != self.n_queries:
            raise DataFormatError("relevance must list one set per query")
        for q, refs in enumerate(self.relevant):
            for r in refs:
                if not 0 <= r < self.n_references:
                    raise DataFormatError(
                        f"relevance for query {q} names reference {r} "
                        f"outside [0, {self.n_references})")

    def matrix(self) -> np.ndarray:
        '''Dense boolean (n_queries, n_references) view.'''
        out = np.zeros((self.n_queries, self.n_references), dtype=bool)
        for q, refs in enumerate(self.relevant):
            if refs:
                out[q, sorted(refs)] = True
        return out


def relevance_from_positions(query_xy, reference_xy, threshold_meters: float) -> RelevanceMap:
    '''Mark references within threshold_meters (inclusive) of each query.

    Positions are planar coordinates in meters; distance is Euclidean. The
    comparison is done on squared distances so the boundary case is exact.
    '''
    q = np.asarray(query_xy, dtype=np.float64)
    r = np.asarray(reference_xy, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 2 or r.ndim != 2 or r.shape[1] != 2:
        raise ValueError("positions must be (n, 2) arrays")
    if not (np.isfinite(q).all() and np.isfinite(r).all()):
        raise ValueError("positions must be finite")
    if not (math.isfinite(threshold_meters) and threshold_meters >= 0):
        raise ValueError("threshold_meters must be finite and non-negative")
    dx = q[:, 0][:, None] - r[:, 0][None, :]
    dy = q[:, 1][:, None] - r[:, 1][None, :]
    within = dx * dx + dy * dy <= threshold_meters * threshold_meters
    sets = tuple(frozenset(np.nonzero(row)[0].tolist()) for row in within)
    return RelevanceMap(len(q), len(r), sets)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class MultimodalDataset:
    '''In-memory dataset: embeddings per (modality, space), masks, relevance.

    Embedding dict keys are (modality name, space name); arrays are float64
    with one row per instance. Mask columns follow the schema's modality
    order for the matching side.
    '''

    schema: ModalitySchema
    query_embeddings: dict
    reference_embeddings: dict
    query_mask: np.ndarray
    reference_mask: np.ndarray
    relevance: RelevanceMap

    def __post_init__(self):
        self.query_mask = np.asarray(self.query_mask, dtype=bool)
        self.reference_mask = np.asarray(self.reference_mask, dtype=bool)
        for side, mask, mods in (
            ("query", self.query_mask, self.schema.query_modalities),
            ("reference", self.reference_mask, self.schema.reference_modalities),
        ):
            if mask.ndim != 2 or mask.shape[1] != len(mods):
                raise DataFormatError(
                    f"{side} mask must be (n, {len(mods)}), got {mask.shape}")
        self._check_side("query", self.query_embeddings,
                         self.query_mask, "query_modalities")
        self._check_side("reference", self.reference_embeddings,
                         self.reference_mask, "reference_modalities")
        if self.relevance.n_queries != self.n_queries:
            raise DataFormatError("relevance query count disagrees with embeddings")
        if self.relevance.n_references != self.n_references:
            raise DataFormatError("relevance reference count disagrees with embeddings")

    def _check_side(self, side, embeddings, mask, coverage_attr):
        expected = {
            (mod, space.name)
            for space in self.schema.spaces
            for mod in getattr(space, coverage_attr)
        }
        if set(embeddings) != expected:
            missing = expected - set(embeddings)
            extra = set(embeddings) - expected
            raise DataFormatError(
                f"{side} embeddings keys mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}")
        n = mask.shape[0]
        by_name = {s.name: s for s in self.schema.spaces}
        for (mod, space_name), arr in embeddings.items():
            arr = np.asarray(arr, dtype=np.float64)
            embeddings[(mod, space_name)] = arr
            if arr.ndim != 2:
                raise DataFormatError(f"{side} embedding {mod}/{space_name} must be 2-D")
            if arr.shape[0] != n:
                raise DataFormatError(
                    f"{side} embedding {mod}/{space_name} has {arr.shape[0]} rows, "
                    f"expected {n}")
            if arr.shape[1] != by_name[space_name].dim:
                raise DataFormatError(
                    f"{side} embedding {mod}/{space_name} has dim {arr.shape[1]}, "
                    f"space says {by_name[space_name].dim}")
            if not np.isfinite(arr).all():
                raise DataFormatError(
                    f"{side} embedding {mod}/{space_name} contains NaN or Inf")

    @property
    def n_queries(self) -> int:
        return int(self.query_mask.shape[0])

    @property
    def n_references(self) -> int:
        return int(self.reference_mask.shape[0])

    def fingerprint(self) -> str:
        return schema_fingerprint(self.schema)


# ---------------------------------------------------------------------------
# Binary files
# ---------------------------------------------------------------------------

def write_embedding_file(path, matrix):
    '''Serialize a 2-D matrix as float32 little-endian with a fixed header.'''
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    if not np.isfinite(arr).all():
        raise ValueError("embedding matrix must be finite")
    header = _EMB_HEADER.pack(EMBEDDING_MAGIC, FORMAT_VERSION, 0, 0,
                              arr.shape[0], arr.shape[1])
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_embedding_file(path) -> np.ndarray:
    '''Read an embedding file back as float64. Rejects malformed files.'''
    blob = _read_binary(path, _EMB_HEADER.size)
    magic, version, dtype, _pad, rows, dims = _EMB_HEADER.unpack_from(blob)
    if magic != EMBEDDING_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise DataFormatError(f"{path}: unsupported dtype code {dtype}")
    expected = rows * dims * 4
    payload = blob[_EMB_HEADER.size:]
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, dims).astype(np.float64)
    if not np.isfinite(arr).all():
        raise DataFormatError(f"{path}: payload contains NaN or Inf")
    return arr


def write_mask_file(path, mask):
    '''Serialize a presence mask as one byte per cell (0 or 1).'''
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError("mask must be 2-D")
    header = _MASK_HEADER.pack(MASK_MAGIC, FORMAT_VERSION, 0,
                               arr.shape[0], arr.shape[1])
    atomic_write_bytes(path, header + arr.astype(np.uint8).tobytes())


def read_mask_file(path) -> np.ndarray:
    blob = _read_binary(path, _MASK_HEADER.size)
    magic, version, _pad, rows, mods = _MASK_HEADER.unpack_from(blob)
    if magic != MASK_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MASK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    payload = blob[_MASK_HEADER.size:]
    if len(payload) != rows * mods:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, header promises {rows * mods}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DataFormatError(f"{path}: mask bytes must be 0 or 1")
    return arr.reshape(rows, mods).astype(bool)


def _read_binary(path, min_size):
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    if len(blob) < min_size:
        raise DataFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    return blob


# ---------------------------------------------------------------------------
# CSV files
# ---------------------------------------------------------------------------

def write_relevance_pairs(path, relevance: RelevanceMap):
    lines = ["query_id,reference_id"]
    for q, refs in enumerate(relevance.relevant):
        for r in sorted(refs):
            lines.append(f"{q},{r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_relevance_pairs(path, n_queries: int, n_references: int) -> RelevanceMap:
    sets = [set() for _ in range(n_queries)]
    for row in _read_csv(path, ("query_id", "reference_id")):
        q = _parse_int(path, "query_id", row[0])
        r = _parse_int(path, "reference_id", row[1])
        if not 0 <= q < n_queries:
            raise DataFormatError(f"{path}: query_id {q} outside [0, {n_queries})")
        if not 0 <= r < n_references:
            raise DataFormatError(f"{path}: reference_id {r} outside [0, {n_references})")
        sets[q].add(r)
    return RelevanceMap(n_queries, n_references, tuple(frozenset(s) for s in sets))


def read_positions(path) -> np.ndarray:
    '''Read an id,x,y CSV; ids must cover 0..n-1. Returns xy ordered by id.'''
    rows = _read_csv(path, ("id", "x", "y"))
    ids, xs, ys = [], [], []
    for row in rows:
        ids.append(_parse_int(path, "id", row[0]))
        xs.append(_parse_float(path, "x", row[1]))
        ys.append(_parse_float(path, "y", row[2]))
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise DataFormatError(f"{path}: ids must cover 0..{n - 1} exactly once")
    xy = np.empty((n, 2), dtype=np.float64)
    xy[ids, 0] = xs
    xy[ids, 1] = ys
    if not np.isfinite(xy).all():
        raise DataFormatError(f"{path}: coordinates must be finite")
    return xy


def _read_csv(path, expected_header):
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != expected_header:
                raise DataFormatError(
                    f"{path}: header must be {','.join(expected_header)!r}, got {header}")
            rows = []
            for row in reader:
                if not row:
                    continue
                if len(row) != len(expected_header):
                    raise DataFormatError(f"{path}: malformed row {row}")
                rows.append(row)
            return rows
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc


def _parse_int(path, fieldname, text):
    try:
        return int(text)
    except ValueError as exc:
        raise DataFormatError(f"{path}: field {fieldname} has non-integer {text!r}") from exc


def _parse_float(path, fieldname, text):
    try:
        return float(text)
    except ValueError as exc:
        raise DataFormatError(f"{path}: field {fieldname} has non-numeric {text!r}") from exc


# ---------------------------------------------------------------------------
# Dataset-level operations
# ---------------------------------------------------------------------------

def apply_modality_dropout(mask, probabilities, seed, keep_at_least_one=False):
    '''Randomly clear present modalities, column c with probabilities[c].

    With keep_at_least_one, rows that started non-empty are redrawn until at
    least one modality survives; rows that were already empty stay empty.
    '''
    mask = np.asarray(mask, dtype=bool)
    probs = np.asarray(probabilities, dtype=np.float64)
    if mask.ndim != 2 or probs.shape != (mask.shape[1],):
        raise ValueError("probabilities must give one value per modality column")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("dropout probabilities must lie in [0, 1]")
    if keep_at_least_one and np.any(probs >= 1.0):
        raise ValueError("keep_at_least_one cannot hold with a probability of 1")
    rng = np.random.default_rng(seed)
    out = mask & ~(rng.random(mask.shape) < probs[None, :])
    if keep_at_least_one:
        for i in np.nonzero(mask.any(axis=1) & ~out.any(axis=1))[0]:
            while True:
                row = mask[i] & ~(rng.random(mask.shape[1]) < probs)
                if row.any():
                    out[i] = row
                    break
    return out


def split_queries(n_queries: int, calibration_fraction: float, seed):
    '''Deterministic disjoint split of query ids into (calibration, rest).

    The calibration side gets floor(fraction * n + 0.5) queries. Both sides
    must end up non-empty.
    '''
    if n_queries < 2:
        raise ValueError("need at least 2 queries to split")
    if not 0.0 < calibration_fraction < 1.0:
        raise ValueError("calibration_fraction must lie strictly inside (0, 1)")
    size = int(math.floor(calibration_fraction * n_queries + 0.5))
    if size == 0 or size == n_queries:
        raise ValueError(
            f"calibration_fraction {calibration_fraction} rounds to an empty side "
            f"for {n_queries} queries")
    perm = np.random.default_rng(seed).permutation(n_queries)
    return np.sort(perm[:size]), np.sort(perm[size:])


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_dataset(path) -> MultimodalDataset:
    '''Load a dataset from a manifest file (or a directory holding one).

    All paths inside the manifest resolve relative to the manifest's
    directory. A missing mask entry means every modality is present.
    '''
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    try:
        with open(path, encoding="utf-8") as handle:
            manifest = json.load(handle)
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    base = os.path.dirname(path)

    def resolve(rel):
        return os.path.join(base, rel)

    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: manifest version {version!r}, expected 1")
    try:
        query_mods = tuple(manifest["query_modalities"])
        reference_mods = tuple(manifest["reference_modalities"])
        space_entries = manifest["spaces"]
        relevance_entry = manifest["relevance"]
    except KeyError as exc:
        raise DataFormatError(f"{path}: manifest is missing key {exc}") from exc

    overrides = {}
    for pair_text, space_name in manifest.get("pair_space", {}).items():
        if pair_text.count(":") != 1:
            raise DataFormatError(
                f"{path}: pair_space key {pair_text!r} must look like 'qmod:rmod'")
        qmod, rmod = pair_text.split(":")
        overrides[(qmod, rmod)] = space_name

    spaces = []
    for entry in space_entries:
        try:
            spaces.append(SharedSpace(
                name=entry["name"],
                dim=int(entry["dim"]),
                query_modalities=tuple(entry.get("query_embeddings", {})),
                reference_modalities=tuple(entry.get("reference_embeddings", {})),
            ))
        except KeyError as exc:
            raise DataFormatError(f"{path}: space entry is missing key {exc}") from exc
    schema = ModalitySchema(query_mods, reference_mods, tuple(spaces), overrides)

    def read_side(side_key):
        out = {}
        for entry in space_entries:
            for mod, rel in entry.get(side_key, {}).items():
                arr = read_embedding_file(resolve(rel))
                if arr.shape[1] != int(entry["dim"]):
                    raise DataFormatError(
                        f"{resolve(rel)}: dim {arr.shape[1]} disagrees with space "
                        f"{entry['name']!r} dim {entry['dim']}")
                out[(mod, entry["name"])] = arr
        return out

    query_embeddings = read_side("query_embeddings")
    reference_embeddings = read_side("reference_embeddings")

    def side_rows(embeddings, side):
        rows = {arr.shape[0] for arr in embeddings.values()}
        if len(rows) != 1:
            raise DataFormatError(f"{path}: {side} embedding files disagree on row count")
        return rows.pop()

    n_queries = side_rows(query_embeddings, "query")
    n_references = side_rows(reference_embeddings, "reference")

    def read_mask(key, n, mods, side):
        rel = manifest.get(key)
        if rel is None:
            return np.ones((n, len(mods)), dtype=bool)
        mask = read_mask_file(resolve(rel))
        if mask.shape != (n, len(mods)):
            raise DataFormatError(
                f"{resolve(rel)}: {side} mask shape {mask.shape}, "
                f"expected {(n, len(mods))}")
        return mask

    query_mask = read_mask("query_mask", n_queries, query_mods, "query")
    reference_mask = read_mask("reference_mask", n_references, reference_mods, "reference")

    kind = relevance_entry.get("type")
    if kind == "pairs":
        relevance = read_relevance_pairs(
            resolve(relevance_entry["path"]), n_queries, n_references)
    elif kind == "positions":
        try:
            q_xy = read_positions(resolve(relevance_entry["query_path"]))
            r_xy = read_positions(resolve(relevance_entry["reference_path"]))
            threshold = float(relevance_entry["threshold_meters"])
        except KeyError as exc:
            raise DataFormatError(
                f"{path}: positions relevance is missing key {exc}") from exc
        if len(q_xy) != n_queries or len(r_xy) != n_references:
            raise DataFormatError(f"{path}: position row counts disagree with embeddings")
        relevance = relevance_from_positions(q_xy, r_xy, threshold)
    else:
        raise DataFormatError(f"{path}: unknown relevance type {kind!r}")

    return MultimodalDataset(
        schema=schema,
        query_embeddings=query_embeddings,
        reference_embeddings=reference_embeddings,
        query_mask=query_mask,
        reference_mask=reference_mask,
        relevance=relevance,
    )


def save_dataset(dataset: MultimodalDataset, out_dir):
    '''Write a dataset directory: manifest.json plus all referenced files.'''
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    schema = dataset.schema
    spaces = []
    for space in schema.spaces:
        entry = {
            "name": space.name,
            "dim": space.dim,
            "query_embeddings": {},
            "reference_embeddings": {},
        }
        for mod in space.query_modalities:
            fname = f"query_{mod}_{space.name}.emb"
            write_embedding_file(os.path.join(out_dir, fname),
                                 dataset.query_embeddings[(mod, space.name)])
            entry["query_embeddings"][mod] = fname
        for mod in space.reference_modalities:
            fname = f"reference_{mod}_{space.name}.emb"
            write_embedding_file(os.path.join(out_dir, fname),
                                 dataset.reference_embeddings[(mod, space.name)])
            entry["reference_embeddings"][mod] = fname
        spaces.append(entry)
    write_mask_file(os.path.join(out_dir, "query_mask.msk"), dataset.query_mask)
    write_mask_file(os.path.join(out_dir, "reference_mask.msk"), dataset.reference_mask)
    write_relevance_pairs(os.path.join(out_dir, "relevance.csv"), dataset.relevance)
    manifest = {
        "version": FORMAT_VERSION,
        "query_modalities": list(schema.query_modalities),
        "reference_modalities": list(schema.reference_modalities),
        "spaces": spaces,
        "query_mask": "query_mask.msk",
        "reference_mask": "reference_mask.msk",
        "relevance": {"type": "pairs", "path": "relevance.csv"},
    }
    if schema.pair_overrides:
        manifest["pair_space"] = {
            f"{q}:{r}": name for (q, r), name in sorted(schema.pair_overrides.items())
        }
    atomic_write_text(os.path.join(out_dir, "manifest.json"),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
