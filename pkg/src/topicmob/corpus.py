"""Report ingestion and summary-text preprocessing.

Turns a table of incident reports into typed :class:`Report` records and the
free-text summaries into sparse bag-of-words counts over a shared vocabulary.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from nltk.stem.snowball import SnowballStemmer
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError

logger = logging.getLogger(__name__)

KIA_COLUMNS = ("kia_civilian", "kia_host", "kia_friend", "kia_enemy")
CATEGORICAL_COLUMNS = ("region", "attack_on", "dcolor", "complex_attack")
COLUMNS = ("id", "date") + CATEGORICAL_COLUMNS + KIA_COLUMNS + ("summary",)
NA_LEVEL = "NA"

DEFAULT_LEVELS: dict[str, frozenset[str]] = {
    "region": frozenset(
        {"RC NORTH", "RC EAST", "RC WEST", "RC SOUTH", "RC CAPITAL", "UNKNOWN", "NONE SELECTED", NA_LEVEL}
    ),
    "attack_on": frozenset({"FRIEND", "NEUTRAL", "ENEMY", "UNKNOWN", NA_LEVEL}),
    "dcolor": frozenset({"RED", "BLUE", "GREEN", "UNKNOWN", NA_LEVEL}),
    "complex_attack": frozenset({"TRUE", "FALSE", NA_LEVEL}),
}

STOPLIST_RESOURCE = "stopwords_en_v1.txt"

_TOKEN_RE = re.compile(r"[^\W\d_]+")


@dataclass(frozen=True)
class Report:
    id: str
    date: datetime | None
    region: str
    attack_on: str
    dcolor: str
    complex_attack: str
    kia_civilian: int
    kia_host: int
    kia_friend: int
    kia_enemy: int
    summary: str

    @property
    def y(self) -> int:
        """Total fatalities: the modelling target."""
        return self.kia_civilian + self.kia_host + self.kia_friend + self.kia_enemy


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    min_count: int = 1
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    def to_json(self) -> str:
        return json.dumps({"terms": list(self.terms), "min_count": self.min_count}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(tuple(obj["terms"]), int(obj["min_count"]))


@dataclass(frozen=True)
class DocTermCounts:
    """Sparse term counts of one document; ``indices`` strictly increasing."""

    doc_id: str
    indices: tuple[int, ...]
    counts: tuple[int, ...]

    @property
    def length(self) -> int:
        return sum(self.counts)

    @property
    def is_empty(self) -> bool:
        return not self.counts

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.indices, self.counts))

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "length": self.length, "entries": [list(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "DocTermCounts":
        entries = obj["entries"]
        return cls(str(obj["doc_id"]), tuple(int(u) for u, _ in entries), tuple(int(c) for _, c in entries))


def tokenize(text: str) -> list[str]:
    """Lowercased alphabetic runs of length >= 2; digits split runs."""
    return [tok for tok in _TOKEN_RE.findall(text.lower()) if len(tok) >= 2]


@lru_cache(maxsize=None)
def load_stoplist(path: str | None = None) -> frozenset[str]:
    """Read a stop list (one term per line, ``#`` comments). ``None`` loads the shipped list."""
    if path is None:
        text = resources.files("topicmob.data").joinpath(STOPLIST_RESOURCE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = (line.strip().lower() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def remove_stopwords(tokens: Iterable[str], stoplist: Iterable[str] | None = None) -> list[str]:
    stop = load_stoplist() if stoplist is None else stoplist
    if not isinstance(stop, (set, frozenset)):
        stop = frozenset(stop)
    return [t for t in tokens if t not in stop]


_stemmer = SnowballStemmer("english")


def stem(token: str) -> str:
    """Porter2 (Snowball English) stem of a lowercase token."""
    return _stemmer.stem(token)


def preprocess(text: str, stoplist: Iterable[str] | None = None) -> list[str]:
    """tokenize -> remove_stopwords -> stem."""
    return [stem(t) for t in remove_stopwords(tokenize(text), stoplist)]


def build_vocabulary(docs: Iterable[Sequence[str]], min_count: int = 5) -> Vocabulary:
    """Terms with corpus frequency >= ``min_count``, sorted lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    totals: Counter[str] = Counter()
    for doc in docs:
        totals.update(doc)
    terms = sorted(t for t, c in totals.items() if c >= min_count and t)
    if not terms:
        raise DataError(f"empty vocabulary: no term occurs at least {min_count} times")
    return Vocabulary(tuple(terms), min_count)


def to_counts(tokens: Iterable[str], vocab: Vocabulary, doc_id: str = "") -> DocTermCounts:
    index = vocab.index
    tally = Counter(index[t] for t in tokens if t in index)
    keys = sorted(tally)
    return DocTermCounts(doc_id, tuple(keys), tuple(tally[k] for k in keys))


# ---------------------------------------------------------------------------
# report tables


def _parse_date(raw: str, row: int) -> datetime | None:
    raw = raw.strip()
    if not raw:
        return None
    try:
        return datetime.fromisoformat(raw)
    except ValueError:
        pass
    for fmt in ("%Y-%m-%d %H:%M", "%d-%b-%Y", "%m/%d/%Y %H:%M", "%m/%d/%Y"):
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            continue
    raise DataError(f"unparseable date {raw!r}", row)


def _parse_count(raw, column: str, row: int) -> int:
    if raw is None or (isinstance(raw, str) and not raw.strip()):
        return 0
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DataError(f"{column} is not a count: {raw!r}", row) from None
    if not value.is_integer():
        raise DataError(f"{column} is not an integer: {raw!r}", row)
    if value < 0:
        raise DataError(f"{column} is negative: {raw!r}", row)
    return int(value)


def _parse_level(raw, column: str, row: int, levels: Mapping[str, frozenset[str] | None]) -> str:
    if raw is None or (isinstance(raw, float) and np.isnan(raw)):
        return NA_LEVEL
    value = str(raw).strip().upper()
    if value in ("", "NA", "NAN", "NULL", "NONE"):
        return NA_LEVEL
    allowed = levels.get(column)
    if allowed is not None and value not in allowed:
        raise DataError(f"{column}={raw!r} is not a declared level", row)
    return value


def _record_to_report(rec: Mapping, row: int, levels) -> Report:
    rid = rec.get("id")
    if rid is None or not str(rid).strip():
        raise DataError("missing id", row)
    cats = {c: _parse_level(rec.get(c), c, row, levels) for c in CATEGORICAL_COLUMNS}
    kia = {c: _parse_count(rec.get(c), c, row) for c in KIA_COLUMNS}
    date = rec.get("date")
    summary = rec.get("summary")
    return Report(
        id=str(rid).strip(),
        date=_parse_date(str(date), row) if date is not None else None,
        summary="" if summary is None else str(summary),
        **cats,
        **kia,
    )


def load_reports(
    path: str | Path,
    format: str | None = None,
    column_map: Mapping[str, str] | None = None,
    levels: Mapping[str, frozenset[str] | None] | None = None,
) -> list[Report]:
    """Parse a CSV or JSONL report table.

    ``column_map`` renames source headers to the canonical column names.
    ``levels`` overrides the declared level set per categorical column; a
    ``None`` entry accepts any level. Missing categoricals become ``"NA"``.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "jsonl"):
        raise DataError(f"unsupported report format {fmt!r}")
    rename = dict(column_map or {})
    lv = dict(DEFAULT_LEVELS)
    if levels:
        lv.update(levels)

    def canonical(rec: Mapping) -> dict:
        return {rename.get(k, k): v for k, v in rec.items()}

    reports: list[Report] = []
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            header = {rename.get(h, h) for h in (reader.fieldnames or [])}
            missing = {"id", "summary", *KIA_COLUMNS} - header
            if missing:
                raise DataError(f"missing columns: {sorted(missing)}")
            for row, rec in enumerate(reader, start=1):
                if None in rec:
                    raise DataError("too many fields", row)
                reports.append(_record_to_report(canonical(rec), row, lv))
        else:
            for row, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"invalid JSON ({exc.msg})", row) from None
                if not isinstance(rec, dict):
                    raise DataError("record is not an object", row)
                reports.append(_record_to_report(canonical(rec), row, lv))

    seen: set[str] = set()
    for row, rep in enumerate(reports, start=1):
        if rep.id in seen:
            raise DataError(f"duplicate id {rep.id!r}", row)
        seen.add(rep.id)
    return reports


def reports_frame(reports: Sequence[Report]):
    """Reports as a DataFrame indexed by id, with the target column ``y``."""
    import pandas as pd

    frame = pd.DataFrame(
        {
            "date": [r.date for r in reports],
            **{c: [getattr(r, c) for r in reports] for c in CATEGORICAL_COLUMNS},
            **{c: [getattr(r, c) for r in reports] for c in KIA_COLUMNS},
            "y": [r.y for r in reports],
        },
        index=pd.Index([r.id for r in reports], name="id"),
    )
    return frame


# ---------------------------------------------------------------------------
# estimator


class TextVectorizer(TransformerMixin, BaseEstimator):
    """Preprocess raw summaries into :class:`DocTermCounts`.

    ``fit`` builds the vocabulary; ``transform`` maps texts onto it. Documents
    left empty after preprocessing are kept and reported via ``is_empty``.
    """

    def __init__(self, min_count=5, stoplist=None):
        self.min_count = min_count
        self.stoplist = stoplist

    def _stop(self):
        if self.stoplist is None or isinstance(self.stoplist, str):
            return load_stoplist(self.stoplist)
        return frozenset(self.stoplist)

    def fit(self, X, y=None):
        stop = self._stop()
        self.vocabulary_ = build_vocabulary((preprocess(t, stop) for t in X), self.min_count)
        return self

    def transform(self, X, doc_ids=None):
        check_is_fitted(self, "vocabulary_")
        stop = self._stop()
        texts = list(X)
        ids = [str(i) for i in range(len(texts))] if doc_ids is None else [str(i) for i in doc_ids]
        if len(ids) != len(texts):
            raise ValueError("doc_ids and X differ in length")
        docs = [to_counts(preprocess(t, stop), self.vocabulary_, d) for t, d in zip(texts, ids)]
        n_empty = sum(d.is_empty for d in docs)
        if n_empty:
            logger.info("%d of %d documents are empty after preprocessing", n_empty, len(docs))
        return docs

    def fit_transform(self, X, y=None, doc_ids=None):
        texts = list(X)
        return self.fit(texts).transform(texts, doc_ids=doc_ids)
