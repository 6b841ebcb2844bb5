"""Append-only JSON-lines store for measured policy results.

Layout: the first line is a header carrying the schema version; every
further line is one stored trial keyed by (dataset, model, optimizer).
Appends are the only mutation, so a reader can tail the file while a
single writer appends; cross-process coordination beyond an advisory
write lock is out of scope.

Crash safety: a final line cut short by an interrupted append is
detected on open, skipped with a warning, and overwritten by the next
append.  Corruption anywhere else refuses to open rather than guess.

Stored trial documents keep their metric series thinned to at most
:data:`SERIES_CAP` points (the peak entry always survives thinning);
peak and final fields are exact regardless.
"""
from __future__ import annotations

import contextlib
import json
import os
import time
import warnings
from dataclasses import dataclass

from .errors import DbError
from .schedules import LRPolicy
from .training import TrialRecord, record_from_doc, record_to_doc, downsample_points
from .tuning import rank_policies, iterations_to_target, RANK_METRICS

__all__ = ["DbKey", "DbRecord", "PolicyDb", "SCHEMA_VERSION", "SERIES_CAP"]

SCHEMA_VERSION = 1
SERIES_CAP = 512


@dataclass(frozen=True)
class DbKey:
    """Identity of a measurement context; every component non-empty."""

    dataset_id: str
    model_id: str
    optimizer_id: str

    def __post_init__(self) -> None:
        for name in ("dataset_id", "model_id", "optimizer_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise DbError(f"DbKey.{name} must be a non-empty string, got {value!r}")

    def to_doc(self) -> dict:
        return {"dataset_id": self.dataset_id, "model_id": self.model_id,
                "optimizer_id": self.optimizer_id}

    @classmethod
    def from_doc(cls, doc: dict) -> "DbKey":
        try:
            return cls(dataset_id=doc["dataset_id"], model_id=doc["model_id"],
                       optimizer_id=doc["optimizer_id"])
        except (KeyError, TypeError) as exc:
            raise DbError(f"malformed key document: {doc!r}") from exc


@dataclass(frozen=True)
class DbRecord:
    """One stored trial with its store id and insertion time."""

    id: int
    key: DbKey
    record: TrialRecord
    inserted_at: float


def _thin_series(doc: dict, peak_iter) -> dict:
    series = doc["series"]
    if len(series) > SERIES_CAP:
        kept = downsample_points(series, SERIES_CAP)
        if peak_iter is not None and not any(m["iteration"] == peak_iter for m in kept):
            # Make room first so reinserting the peak cannot exceed the cap.
            kept = downsample_points(series, SERIES_CAP - 1)
            kept.append(next(m for m in series if m["iteration"] == peak_iter))
            kept.sort(key=lambda m: m["iteration"])
        doc["series"] = kept
        doc.pop("meta", None)  # wall times no longer align with the series
    if len(doc["lr_trace"]) > SERIES_CAP:
        doc["lr_trace"] = downsample_points(doc["lr_trace"], SERIES_CAP)
    return doc


def _check_consistency(doc: dict) -> None:
    series = doc["series"]
    tops = [(m["top1"], m["iteration"]) for m in series if m.get("top1") is not None]
    peak, peak_iter = doc["peak_top1"], doc["iter_at_peak"]
    if not tops:
        if peak is not None or peak_iter is not None:
            raise DbError("record claims a peak but its series has no accuracy")
        return
    best = max(v for v, _ in tops)
    if peak != best:
        raise DbError(f"record peak_top1={peak!r} but series max is {best!r}")
    if not any(i == peak_iter and v == best for v, i in tops):
        raise DbError(f"record iter_at_peak={peak_iter!r} does not attain the peak")


class PolicyDb:
    """Open (creating if needed) a policy store at ``path``."""

    def __init__(self, path: str):
        self.path = str(path)
        self._rows: list[tuple[DbRecord, dict]] = []
        self._next_id = 1
        if os.path.exists(self.path):
            self._load()
        else:
            self._write_header()

    # -- file plumbing ------------------------------------------------------

    def _write_header(self) -> None:
        try:
            with open(self.path, "w", encoding="utf-8") as f:
                f.write(json.dumps({"kind": "header", "schema_version": SCHEMA_VERSION}) + "\n")
        except OSError as exc:
            raise DbError(f"cannot create store at {self.path!r}: {exc}") from exc

    def _load(self) -> None:
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise DbError(f"cannot read store at {self.path!r}: {exc}") from exc
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            self._write_header()
            return
        parsed: list[dict] = []
        for i, line in enumerate(lines):
            try:
                parsed.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if i == len(lines) - 1:
                    warnings.warn(f"{self.path}: skipping truncated final line {i + 1}")
                    self._truncate_to(lines[:i])
                    break
                raise DbError(f"{self.path} line {i + 1}: invalid JSON: {exc}") from exc
        if not parsed:
            self._write_header()
            return
        header = parsed[0]
        if not isinstance(header, dict) or header.get("kind") != "header":
            raise DbError(f"{self.path} line 1: expected a header line")
        if header.get("schema_version") != SCHEMA_VERSION:
            raise DbError(f"{self.path}: schema_version {header.get('schema_version')!r} "
                          f"unsupported (want {SCHEMA_VERSION})")
        for i, doc in enumerate(parsed[1:], start=2):
            row = self._row_from_line(doc, i)
            self._rows.append(row)
            self._next_id = max(self._next_id, row[0].id + 1)

    def _row_from_line(self, doc, lineno: int) -> tuple[DbRecord, dict]:
        try:
            if doc.get("kind") != "record":
                raise DbError(f"{self.path} line {lineno}: expected a record line")
            rec_doc = doc["record"]
            db_rec = DbRecord(id=int(doc["id"]), key=DbKey.from_doc(doc["key"]),
                              record=record_from_doc(rec_doc),
                              inserted_at=float(doc["inserted_at"]))
            return db_rec, rec_doc
        except DbError:
            raise
        except Exception as exc:
            raise DbError(f"{self.path} line {lineno}: malformed record: {exc!r}") from exc

    def _truncate_to(self, lines: list[str]) -> None:
        with open(self.path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")

    def _append_line(self, line: str) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            with _advisory_lock(f):
                f.write(line + "\n")
                f.flush()

    # -- operations ---------------------------------------------------------

    def put(self, key: DbKey, record: TrialRecord, *, stable: bool = False,
            inserted_at: float | None = None) -> int:
        """Store one trial; returns its monotonically increasing id."""
        if not isinstance(key, DbKey):
            raise DbError(f"key must be a DbKey, got {type(key).__name__}")
        doc = record_to_doc(record, stable=stable)
        _check_consistency(doc)
        doc = _thin_series(doc, record.iter_at_peak)
        if inserted_at is None:
            inserted_at = 0.0 if stable else time.time()
        db_rec = DbRecord(id=self._next_id, key=key, record=record, inserted_at=inserted_at)
        line = json.dumps({"kind": "record", "id": db_rec.id, "inserted_at": inserted_at,
                           "key": key.to_doc(), "record": doc})
        self._append_line(line)
        self._rows.append((db_rec, doc))
        self._next_id += 1
        return db_rec.id

    def __len__(self) -> int:
        return len(self._rows)

    def query(self, key: DbKey) -> list[DbRecord]:
        """Records under exactly ``key``, in insertion order."""
        return [r for r, _ in self._rows if r.key == key]

    def query_partial(self, dataset_id: str | None = None, model_id: str | None = None,
                      optimizer_id: str | None = None) -> list[DbRecord]:
        """Records matching every given component (None matches all)."""
        out = []
        for r, _ in self._rows:
            if dataset_id is not None and r.key.dataset_id != dataset_id:
                continue
            if model_id is not None and r.key.model_id != model_id:
                continue
            if optimizer_id is not None and r.key.optimizer_id != optimizer_id:
                continue
            out.append(r)
        return out

    def top_n(self, key: DbKey, n: int, metric: str = "peak_top1",
              target_top1: float | None = None) -> list[tuple[LRPolicy, float]]:
        """Best ``n`` stored trials under ``key`` by ``metric``.

        The result for ``n`` is always a prefix of the result for
        ``n + 1`` because ranking is total and deterministic.
        """
        if n < 1:
            raise DbError(f"n must be >= 1, got {n}")
        if metric not in RANK_METRICS:
            raise DbError(f"unknown metric {metric!r}; expected one of {RANK_METRICS}")
        matches = [r.record for r in self.query(key)]
        if not matches:
            return []
        ranked = rank_policies(matches, metric=metric, target_top1=target_top1)

        def value(rec: TrialRecord) -> float:
            if metric == "peak_top1":
                return rec.peak_top1
            if metric == "final_loss":
                return rec.final_loss
            it = iterations_to_target(rec, target_top1)
            return float("inf") if it is None else float(it)

        return [(rec.policy, value(rec)) for rec in ranked[:n]]

    def export(self, path: str) -> int:
        """Write the whole store to ``path``; returns the record count."""
        if os.path.abspath(path) == os.path.abspath(self.path):
            raise DbError("export target must differ from the store file")
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write(json.dumps({"kind": "header", "schema_version": SCHEMA_VERSION}) + "\n")
                for db_rec, doc in self._rows:
                    f.write(json.dumps({"kind": "record", "id": db_rec.id,
                                        "inserted_at": db_rec.inserted_at,
                                        "key": db_rec.key.to_doc(), "record": doc}) + "\n")
        except OSError as exc:
            raise DbError(f"cannot export to {path!r}: {exc}") from exc
        return len(self._rows)

    def import_(self, path: str) -> int:
        """Append every record from an exported file; all-or-nothing.

        Any malformed line aborts with an error naming it, leaving both
        the store file and memory untouched.  Imported records get fresh
        ids; keys, payloads, and insertion times are preserved.
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = [ln for ln in f.read().split("\n") if ln != ""]
        except OSError as exc:
            raise DbError(f"cannot read import file {path!r}: {exc}") from exc
        if not lines:
            raise DbError(f"import file {path!r} is empty")
        docs = []
        for i, line in enumerate(lines, start=1):
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DbError(f"{path} line {i}: invalid JSON: {exc}") from exc
        header = docs[0]
        if not isinstance(header, dict) or header.get("kind") != "header":
            raise DbError(f"{path} line 1: expected a header line")
        if header.get("schema_version") != SCHEMA_VERSION:
            raise DbError(f"{path}: schema_version {header.get('schema_version')!r} "
                          f"unsupported (want {SCHEMA_VERSION})")
        incoming = []
        for i, doc in enumerate(docs[1:], start=2):
            db_rec, rec_doc = self._row_from_line(doc, i)  # validates; raises DbError
            incoming.append((db_rec, rec_doc))
        for db_rec, rec_doc in incoming:
            fresh = DbRecord(id=self._next_id, key=db_rec.key, record=db_rec.record,
                             inserted_at=db_rec.inserted_at)
            self._append_line(json.dumps({"kind": "record", "id": fresh.id,
                                          "inserted_at": fresh.inserted_at,
                                          "key": fresh.key.to_doc(), "record": rec_doc}))
            self._rows.append((fresh, rec_doc))
            self._next_id += 1
        return len(incoming)


@contextlib.contextmanager
def _advisory_lock(fileobj):
    try:
        import fcntl
        fcntl.flock(fileobj.fileno(), fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fileobj.fileno(), fcntl.LOCK_UN)
    except ImportError:  # non-POSIX: best effort, single writer assumed
        yield
