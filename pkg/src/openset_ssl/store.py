"""Embedding records, on-disk formats and the synthetic open-set generator."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, DuplicateIdError, ParseError, ValidationError

SPLITS = ("labeled", "unlabeled", "validation", "test")
LABELED_SPLITS = ("labeled", "validation", "test")
FORMATS = ("jsonl", "csv")
CSV_FIXED = ["id", "split", "label", "group_id", "ood_truth"]


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    split: str
    label: int | None
    vector: np.ndarray
    ood_truth: bool | None = None
    group_id: str | None = None

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.label == other.label
            and self.ood_truth == other.ood_truth
            and self.group_id == other.group_id
            and self.vector.shape == other.vector.shape
            and np.array_equal(self.vector, other.vector)
        )

    __hash__ = None


def _check_record(rec: EmbeddingRecord, line=None):
    if rec.split not in SPLITS:
        raise ParseError(f"unknown split {rec.split!r}", line, rec.id)
    if rec.split in LABELED_SPLITS and rec.label is None:
        raise ParseError(f"split {rec.split!r} requires a label", line, rec.id)
    if rec.label is not None and rec.label < 0:
        raise ParseError("label must be a non-negative class index", line, rec.id)
    if rec.vector.ndim != 1 or rec.vector.size < 1:
        raise ParseError("vector must be a non-empty 1-D array", line, rec.id)
    if not np.all(np.isfinite(rec.vector)):
        raise ParseError("vector has non-finite components", line, rec.id)


class EmbeddingStore:
    """Immutable, validated collection of records sharing one dimension."""

    def __init__(self, records=(), dim: int | None = None):
        records = tuple(records)
        seen = set()
        for i, rec in enumerate(records):
            _check_record(rec)
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            if dim is None:
                dim = rec.vector.shape[0]
            elif rec.vector.shape[0] != dim:
                raise DimensionMismatchError(
                    f"record {rec.id!r} (#{i}) has dimension {rec.vector.shape[0]}, expected {dim}"
                )
        self.records = records
        self.dim = dim
        self._index = {rec.id: i for i, rec in enumerate(records)}

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.records[self._index[key]]
        return self.records[key]

    def __eq__(self, other):
        return isinstance(other, EmbeddingStore) and self.records == other.records

    __hash__ = None

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def vectors(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim or 0))
        return np.stack([r.vector for r in self.records])

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if r.label is None else r.label for r in self.records], dtype=np.int64)

    @property
    def splits(self) -> np.ndarray:
        return np.array([r.split for r in self.records], dtype=object)

    @property
    def ood_truth(self) -> np.ndarray:
        """Ground-truth OOD flags; records without a flag count as inliers."""
        return np.array([bool(r.ood_truth) for r in self.records], dtype=bool)

    @property
    def n_classes(self) -> int:
        labels = [r.label for r in self.records if r.label is not None]
        return max(labels) + 1 if labels else 0

    def split_mask(self, *splits) -> np.ndarray:
        return np.isin(self.splits, splits)

    def subset(self, *splits) -> EmbeddingStore:
        return EmbeddingStore([r for r in self.records if r.split in splits], dim=self.dim)

    def index_of(self, ids) -> np.ndarray:
        return np.array([self._index[i] for i in ids], dtype=np.intp)

    def with_vectors(self, vectors) -> EmbeddingStore:
        """Same records with their vectors replaced row by row."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.shape[0] != len(self.records):
            raise DimensionMismatchError("one vector per record required")
        recs = [replace(r, vector=np.array(v)) for r, v in zip(self.records, vectors)]
        return EmbeddingStore(recs, dim=vectors.shape[1])


# ---------------------------------------------------------------- file formats


def _fmt_float(x: float) -> str:
    # repr is the shortest string that round-trips to the same double
    return repr(float(x))


def _parse_bool(text, line, rid):
    if text == "":
        return None
    if text in ("true", "True", "1"):
        return True
    if text in ("false", "False", "0"):
        return False
    raise ParseError(f"bad boolean {text!r}", line, rid)


def _build_record(rid, split, label, vector, ood, group, line):
    if not isinstance(rid, str) or not rid:
        raise ParseError("id must be a non-empty string", line, rid)
    if split == "unlabeled" and label is not None:
        warnings.warn(f"line {line}: unlabeled record {rid!r} carries a label; ignoring it", stacklevel=3)
        label = None
    try:
        vec = np.array(vector, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad vector: {exc}", line, rid) from None
    rec = EmbeddingRecord(rid, split, label, vec, ood, group)
    _check_record(rec, line)
    return rec


def _finish(records, path):
    dim = None
    seen = set()
    for line, rec in records:
        if rec.id in seen:
            raise DuplicateIdError(f"{path}: line {line}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        if dim is None:
            dim = rec.vector.shape[0]
        elif rec.vector.shape[0] != dim:
            raise DimensionMismatchError(
                f"{path}: line {line}: record {rec.id!r} has dimension {rec.vector.shape[0]}, expected {dim}"
            )
    return EmbeddingStore([r for _, r in records], dim=dim)


def _load_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise ParseError("record must be a JSON object", line_no)
            rid = obj.get("id")
            for key in ("id", "split", "vector"):
                if key not in obj:
                    raise ParseError(f"missing field {key!r}", line_no, rid)
            label = obj.get("label")
            if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
                raise ParseError(f"label must be an integer, got {label!r}", line_no, rid)
            ood = obj.get("ood_truth")
            if ood is not None and not isinstance(ood, bool):
                raise ParseError(f"ood_truth must be boolean, got {ood!r}", line_no, rid)
            group = obj.get("group_id")
            if not isinstance(obj["vector"], list):
                raise ParseError("vector must be a list of numbers", line_no, rid)
            records.append(
                (line_no, _build_record(rid, obj["split"], label, obj["vector"], ood, group, line_no))
            )
    return _finish(records, path)


def _load_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", 1) from None
        if header[:5] != CSV_FIXED:
            raise ParseError(f"header must start with {','.join(CSV_FIXED)}", 1)
        vcols = header[5:]
        if vcols != [f"v{i}" for i in range(len(vcols))]:
            raise ParseError("vector columns must be v0..v{D-1}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            rid = row[0] if row else None
            if len(row) != len(header):
                raise DimensionMismatchError(
                    f"{path}: line {line_no}: record {rid!r} has {len(row) - 5} vector values, expected {len(vcols)}"
                )
            _, split, label_s, group, ood_s = row[:5]
            try:
                label = int(label_s) if label_s != "" else None
                vector = [float(x) for x in row[5:]]
            except ValueError as exc:
                raise ParseError(str(exc), line_no, rid) from None
            ood = _parse_bool(ood_s, line_no, rid)
            records.append(
                (line_no, _build_record(rid, split, label, vector, ood, group or None, line_no))
            )
    return _finish(records, path)


def load_store(path, format: str | None = None) -> EmbeddingStore:
    """Read a store from ``path``; format defaults to the file suffix."""
    path = Path(path)
    fmt = format or path.suffix.lstrip(".")
    if fmt == "jsonl":
        return _load_jsonl(path)
    if fmt == "csv":
        return _load_csv(path)
    raise ValidationError(f"unknown store format {fmt!r}; expected one of {FORMATS}")


def save_store(store, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or path.suffix.lstrip(".")
    if not isinstance(store, EmbeddingStore):
        store = EmbeddingStore(store)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for r in store:
                vec = ", ".join(_fmt_float(x) for x in r.vector)
                head = json.dumps(
                    {"id": r.id, "split": r.split, "label": r.label},
                )[:-1]
                tail = json.dumps({"ood_truth": r.ood_truth, "group_id": r.group_id})[1:]
                fh.write(f'{head}, "vector": [{vec}], {tail}\n')
    elif fmt == "csv":
        dim = store.dim or 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIXED + [f"v{i}" for i in range(dim)])
            for r in store:
                ood = "" if r.ood_truth is None else ("true" if r.ood_truth else "false")
                label = "" if r.label is None else str(r.label)
                w.writerow([r.id, r.split, label, r.group_id or "", ood] + [_fmt_float(x) for x in r.vector])
    else:
        raise ValidationError(f"unknown store format {fmt!r}; expected one of {FORMATS}")


# ---------------------------------------------------------- synthetic benchmark


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic-Gaussian open-set benchmark; unit noise variance per axis."""

    n_labeled: int = 25
    n_unlabeled_inlier: int = 2000
    n_ood: int = 3000
    n_val: int = 100
    n_test: int = 400
    C: int = 4
    n_ood_components: int = 5
    raw_dim: int = 32
    class_separation: float = 6.0
    ood_offset: float = 10.0
    seed: int = 0
    test_group_size: int = 20

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("n_") and v < 0:
                raise ValidationError(f"{f.name} must be >= 0")
        if self.C < 2:
            raise ValidationError("C must be >= 2")
        if self.raw_dim < 2:
            raise ValidationError("raw_dim must be >= 2")
        if not self.class_separation > 0 or not self.ood_offset > 0:
            raise ValidationError("class_separation and ood_offset must be > 0")
        if self.n_ood > 0 and self.n_ood_components < 1:
            raise ValidationError("n_ood_components must be >= 1 when n_ood > 0")
        if self.test_group_size < 0:
            raise ValidationError("test_group_size must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def generating_means(spec: SyntheticSpec):
    """Class means and OOD-component means used by the generator.

    With enough dimensions all means sit on scaled orthonormal axes, so
    inlier pairs are ``class_separation`` apart and every OOD mean is
    ``ood_offset`` from each inlier mean, both padded by a factor 1 + 1e-9.
    Otherwise falls back to seeded rejection sampling.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    n_ood_comp = spec.n_ood_components if spec.n_ood > 0 else 0
    s = spec.class_separation / math.sqrt(2.0) * (1 + 1e-9)
    r = math.sqrt(max(spec.ood_offset**2 - s * s, 0.0)) * (1 + 1e-9)
    total = spec.C + n_ood_comp
    if spec.raw_dim >= total:
        q, _ = np.linalg.qr(rng.standard_normal((spec.raw_dim, total)))
        class_means = s * q[:, : spec.C].T
        # r == 0 means the origin (distance s from every class mean) already meets the offset
        ood_means = r * q[:, spec.C :].T
        return class_means, ood_means
    return _rejection_means(spec, rng, n_ood_comp)


def _rejection_means(spec, rng, n_ood_comp):
    scale = spec.class_separation
    class_means = []
    while len(class_means) < spec.C:
        cand = rng.normal(0.0, scale, spec.raw_dim)
        if all(np.linalg.norm(cand - m) >= spec.class_separation for m in class_means):
            class_means.append(cand)
        else:
            scale *= 1.01
    class_means = np.array(class_means)
    ood_means = []
    scale = spec.ood_offset
    center = class_means.mean(axis=0)
    while len(ood_means) < n_ood_comp:
        cand = center + rng.normal(0.0, scale, spec.raw_dim)
        if np.min(np.linalg.norm(class_means - cand, axis=1)) >= spec.ood_offset:
            ood_means.append(cand)
        else:
            scale *= 1.01
    return class_means, np.array(ood_means).reshape(n_ood_comp, spec.raw_dim)


def generate_synthetic_openset(spec: SyntheticSpec) -> EmbeddingStore:
    """Deterministic open-set benchmark store for ``spec``.

    Labeled, validation and test records are inliers with balanced
    round-robin classes. The unlabeled pool mixes inliers with OOD blobs
    and is shuffled before ids are assigned, so ids carry no OOD hint.
    Test records are grouped into single-class bags of ``test_group_size``.
    """
    class_means, ood_means = generating_means(spec)
    D = spec.raw_dim
    # one stream per part: changing one count leaves the other parts untouched
    streams = {part: np.random.default_rng([spec.seed, 1, k]) for k, part in enumerate(SPLITS + ("ood", "shuffle"))}

    def inliers(n, part):
        labels = np.arange(n) % spec.C
        return class_means[labels] + streams[part].standard_normal((n, D)), labels

    records = []
    x, y = inliers(spec.n_labeled, "labeled")
    records += [EmbeddingRecord(f"L{i:06d}", "labeled", int(y[i]), x[i], False) for i in range(len(y))]

    xu, yu = inliers(spec.n_unlabeled_inlier, "unlabeled")
    comp = np.arange(spec.n_ood) % max(len(ood_means), 1)
    xo = ood_means[comp] + streams["ood"].standard_normal((spec.n_ood, D)) if spec.n_ood else np.zeros((0, D))
    pool = np.vstack([xu, xo])
    flags = np.concatenate([np.zeros(len(xu), bool), np.ones(len(xo), bool)])
    order = streams["shuffle"].permutation(len(pool))
    records += [
        EmbeddingRecord(f"U{k:06d}", "unlabeled", None, pool[i], bool(flags[i])) for k, i in enumerate(order)
    ]

    x, y = inliers(spec.n_val, "validation")
    records += [EmbeddingRecord(f"V{i:06d}", "validation", int(y[i]), x[i], False) for i in range(len(y))]

    x, y = inliers(spec.n_test, "test")
    counters = np.zeros(spec.C, dtype=int)
    for i in range(len(y)):
        group = None
        if spec.test_group_size > 0:
            c = int(y[i])
            group = f"G{c}_{counters[c] // spec.test_group_size:04d}"
            counters[c] += 1
        records.append(EmbeddingRecord(f"T{i:06d}", "test", int(y[i]), x[i], False, group))
    return EmbeddingStore(records, dim=D)
