"""Embedding records, datasets and stereo alignment.

Records are stored one per line (JSONL) or one per row (CSV with header
``id,speaker,domain,gender,v0..v{D-1}``). The content id used to pair a
shouted utterance with its normal twin is encoded in the record id as
``<speaker><delim><content><delim><domain>``.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_DELIMITER = "_"


class Domain(str, enum.Enum):
    NORMAL = "normal"
    SHOUTED = "shouted"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value) -> "Domain":
        if value is None or value == "":
            return cls.UNKNOWN
        if isinstance(value, Domain):
            return value
        v = str(value).strip().lower()
        aliases = {"n": "normal", "s": "shouted", "u": "unknown", "shout": "shouted"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise DataError(f"unknown domain label {value!r}") from None


class Gender(str, enum.Enum):
    MALE = "M"
    FEMALE = "F"

    @classmethod
    def parse(cls, value) -> "Gender | None":
        if value is None or value == "":
            return None
        if isinstance(value, Gender):
            return value
        v = str(value).strip().upper()
        aliases = {"MALE": "M", "FEMALE": "F"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise DataError(f"unknown gender label {value!r}") from None


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    speaker: str
    domain: Domain
    gender: Gender | None
    vector: np.ndarray = field(repr=False)
    content: str | None = None

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64).reshape(-1)
        if vec.size < 1:
            raise DataError(f"record {self.id!r}: empty vector")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"record {self.id!r}: non-finite value in vector")
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        object.__setattr__(self, "gender", Gender.parse(self.gender))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]

    def pairing_key(self, delimiter: str = DEFAULT_DELIMITER) -> tuple[str, str]:
        """(speaker, content) key used for stereo alignment."""
        if self.content is not None:
            return self.speaker, self.content
        return self.speaker, parse_content_id(self.id, delimiter)

    def replace_vector(self, vector) -> "EmbeddingRecord":
        return EmbeddingRecord(self.id, self.speaker, self.domain, self.gender,
                               vector, self.content)


def parse_content_id(record_id: str, delimiter: str = DEFAULT_DELIMITER) -> str:
    """Content id from an id laid out as ``speaker<d>content<d>domain``."""
    parts = record_id.rsplit(delimiter, 2)
    if len(parts) != 3:
        raise DataError(
            f"record id {record_id!r} does not follow "
            f"'<speaker>{delimiter}<content>{delimiter}<domain>'")
    return parts[1]


class Dataset:
    """Ordered, immutable collection of records sharing one dimension."""

    def __init__(self, records: Iterable[EmbeddingRecord]):
        records = tuple(records)
        if not records:
            raise DataError("dataset is empty")
        dim = records[0].dim
        seen = set()
        for rec in records:
            if rec.dim != dim:
                raise DataError(
                    f"record {rec.id!r} has dimension {rec.dim}, expected {dim}")
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
        self.records = records
        self.dim = dim

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __repr__(self):
        return f"Dataset(n={len(self)}, dim={self.dim})"

    @cached_property
    def matrix(self) -> np.ndarray:
        m = np.vstack([r.vector for r in self.records])
        m.flags.writeable = False
        return m

    @cached_property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @cached_property
    def index(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.records)}

    @cached_property
    def speakers(self) -> list[str]:
        """Distinct speakers in order of first appearance."""
        return list(dict.fromkeys(r.speaker for r in self.records))

    @cached_property
    def domains(self) -> np.ndarray:
        return np.array([r.domain.value for r in self.records])

    @cached_property
    def speaker_labels(self) -> np.ndarray:
        return np.array([r.speaker for r in self.records])

    def domain_mask(self, domain: Domain) -> np.ndarray:
        return self.domains == Domain(domain).value

    def subset(self, mask_or_indices) -> "Dataset":
        idx = np.arange(len(self))[np.asarray(mask_or_indices)]
        return Dataset(self.records[i] for i in idx)

    def with_vectors(self, matrix: np.ndarray) -> "Dataset":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (len(self), self.dim):
            raise DataError(f"replacement matrix has shape {matrix.shape}, "
                            f"expected {(len(self), self.dim)}")
        return Dataset(r.replace_vector(v) for r, v in zip(self.records, matrix))

    def equals(self, other: "Dataset") -> bool:
        return (self.ids == other.ids
                and [(r.speaker, r.domain, r.gender) for r in self]
                == [(r.speaker, r.domain, r.gender) for r in other]
                and np.array_equal(self.matrix, other.matrix))


@dataclass(frozen=True)
class StereoPairs:
    """Aligned (normal, shouted) vectors; row i of ``x`` pairs with row i of ``y``."""

    x: np.ndarray
    y: np.ndarray
    keys: tuple[tuple[str, str], ...]
    genders: tuple[Gender | None, ...]
    skipped: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.x.shape != self.y.shape or self.x.ndim != 2:
            raise DataError("stereo pair arrays must share shape (N, D)")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def select(self, mask) -> "StereoPairs":
        mask = np.asarray(mask, dtype=bool)
        return StereoPairs(self.x[mask], self.y[mask],
                           tuple(k for k, m in zip(self.keys, mask) if m),
                           tuple(g for g, m in zip(self.genders, mask) if m))


def align_stereo(dataset: Dataset, delimiter: str = DEFAULT_DELIMITER) -> StereoPairs:
    """Pair every Normal record with the Shouted record sharing its key.

    Keys present in only one domain are skipped (and logged). Pair order
    follows the first appearance of the key in the dataset.
    """
    normal: dict[tuple[str, str], EmbeddingRecord] = {}
    shouted: dict[tuple[str, str], EmbeddingRecord] = {}
    order: dict[tuple[str, str], None] = {}
    for rec in dataset:
        if rec.domain is Domain.UNKNOWN:
            continue
        key = rec.pairing_key(delimiter)
        target = normal if rec.domain is Domain.NORMAL else shouted
        if key in target:
            raise DataError(f"key {key} appears twice in domain {rec.domain.value}")
        target[key] = rec
        order.setdefault(key)
    keys, skipped = [], []
    for key in order:
        (keys if key in normal and key in shouted else skipped).append(key)
    if skipped:
        logger.warning("align_stereo: %d key(s) without a counterpart skipped", len(skipped))
    if not keys:
        raise DataError("no stereo pairs could be aligned")
    x = np.vstack([normal[k].vector for k in keys])
    y = np.vstack([shouted[k].vector for k in keys])
    genders = tuple(normal[k].gender or shouted[k].gender for k in keys)
    return StereoPairs(x, y, tuple(keys), genders, tuple(skipped))


# --------------------------------------------------------------------- IO

def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    elif path.suffix.lower() == ".csv":
        fmt = "csv"
    else:
        fmt = "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise DataError(f"unsupported dataset format {fmt!r}")
    return fmt


def _finite_floats(values: Sequence, rid: str) -> list[float]:
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError):
        raise DataError(f"record {rid!r}: non-numeric vector value") from None
    if not all(math.isfinite(v) for v in out):
        raise DataError(f"record {rid!r}: non-finite value in vector")
    return out


def load_dataset(path, format: str | None = None) -> Dataset:
    path = Path(path)
    fmt = _detect_format(path, format)
    records = []
    try:
        fh = path.open(newline="" if fmt == "csv" else None)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        if fmt == "jsonl":
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
                rid = str(row.get("id", ""))
                if not rid or "speaker" not in row or "vector" not in row:
                    raise DataError(f"{path}:{lineno}: id, speaker and vector are required")
                records.append(EmbeddingRecord(
                    rid, str(row["speaker"]), row.get("domain"), row.get("gender"),
                    _finite_floats(row["vector"], rid), row.get("content")))
        else:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:4] != ["id", "speaker", "domain", "gender"]:
                raise DataError(f"{path}: CSV header must start with id,speaker,domain,gender")
            for row in reader:
                if not row:
                    continue
                rid = row[0]
                records.append(EmbeddingRecord(
                    rid, row[1], row[2], row[3], _finite_floats(row[4:], rid)))
    return Dataset(records)


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, format)
    with path.open("w", newline="") as fh:
        if fmt == "jsonl":
            for r in dataset:
                row = {"id": r.id, "speaker": r.speaker, "domain": r.domain.value,
                       "gender": r.gender.value if r.gender else None,
                       "vector": r.vector.tolist()}
                if r.content is not None:
                    row["content"] = r.content
                fh.write(json.dumps(row) + "\n")
        else:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "speaker", "domain", "gender"]
                            + [f"v{i}" for i in range(dataset.dim)])
            for r in dataset:
                writer.writerow([r.id, r.speaker, r.domain.value,
                                 r.gender.value if r.gender else ""]
                                + [repr(float(v)) for v in r.vector])
