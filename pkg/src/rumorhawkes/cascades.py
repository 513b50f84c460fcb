"""Cascade data model, JSON-lines I/O, filtering and truncation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

STRUCTURAL_NAMES = ("depth", "response_time", "elapsed_time")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    def __init__(self, message: str, cascade_id: str | None = None):
        self.cascade_id = cascade_id
        if cascade_id is not None:
            message = f"cascade {cascade_id!r}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CovariateSchema:
    """Names of the cascade (z), user (x) and structural (y) covariates.

    Variables listed in ``log_names`` enter the mark model as ``log(1 + v)``.
    """

    cascade_names: tuple[str, ...] = ("pos_emotion", "neg_emotion", "surprise", "topic_political")
    user_names: tuple[str, ...] = ("followers", "followees", "account_age_days", "engagement")
    structural_names: tuple[str, ...] = STRUCTURAL_NAMES
    log_names: frozenset[str] = frozenset(
        ("followers", "followees", "account_age_days", "engagement") + STRUCTURAL_NAMES
    )

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError(f"covariate names must be unique: {names}")
        unknown = set(self.structural_names) - set(STRUCTURAL_NAMES)
        if unknown:
            raise ValueError(f"unknown structural covariates: {sorted(unknown)}")

    @property
    def names(self) -> tuple[str, ...]:
        return self.cascade_names + self.user_names + self.structural_names

    @property
    def n_c(self) -> int:
        return len(self.cascade_names)

    @property
    def n_u(self) -> int:
        return len(self.user_names)

    @property
    def n_s(self) -> int:
        return len(self.structural_names)

    @property
    def log_transform_flags(self) -> tuple[bool, ...]:
        return tuple(name in self.log_names for name in self.names)

    def to_dict(self) -> dict:
        return {
            "cascade_names": list(self.cascade_names),
            "user_names": list(self.user_names),
            "structural_names": list(self.structural_names),
            "log_names": sorted(self.log_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSchema":
        return cls(
            cascade_names=tuple(d["cascade_names"]),
            user_names=tuple(d["user_names"]),
            structural_names=tuple(d["structural_names"]),
            log_names=frozenset(d["log_names"]),
        )


class Event(NamedTuple):
    time: float
    parent_index: int | None
    user_covariates: np.ndarray
    derived_structural: np.ndarray


@dataclass(frozen=True, eq=False)
class Cascade:
    """A rooted retweet tree observed on ``[0, horizon]``.

    Events are stored column-wise and sorted by time; ``parents[0] == -1``
    marks the root. ``structural`` holds raw (untransformed) depth, response
    time and elapsed time per event.
    """

    id: str
    times: np.ndarray
    parents: np.ndarray
    user: np.ndarray
    z: np.ndarray
    horizon: float
    label: str | None = None
    structural: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "parents", np.asarray(self.parents, dtype=np.int64))
        user = np.asarray(self.user, dtype=float)
        if user.ndim == 1:
            user = user.reshape(len(self.times), -1)
        object.__setattr__(self, "user", user)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        object.__setattr__(self, "horizon", float(self.horizon))
        if self.structural is None:
            object.__setattr__(self, "structural", _structural(self.times, self.parents))
        for arr in (self.times, self.parents, self.user, self.z, self.structural):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def size(self) -> int:
        return len(self.times)

    @property
    def is_false(self) -> bool | None:
        return None if self.label is None else self.label == "false"

    @property
    def depth(self) -> np.ndarray:
        return self.structural[:, 0]

    def event(self, i: int) -> Event:
        parent = int(self.parents[i])
        return Event(float(self.times[i]), None if parent < 0 else parent,
                     self.user[i], self.structural[i])

    @property
    def events(self) -> list[Event]:
        return [self.event(i) for i in range(len(self))]

    def children_counts(self) -> np.ndarray:
        return np.bincount(self.parents[1:], minlength=len(self))

    def validate(self) -> "Cascade":
        validate_cascade(self)
        return self


def _structural(times: np.ndarray, parents: np.ndarray) -> np.ndarray:
    n = len(times)
    out = np.zeros((n, 3))
    if n == 0:
        return out
    depth = out[:, 0]
    for i in range(1, n):
        depth[i] = depth[parents[i]] + 1.0
    out[1:, 1] = times[1:] - times[parents[1:]]
    out[:, 2] = times - times[0]
    return out


def derive_structural(cascade: Cascade) -> Cascade:
    """Recompute depth (edge count), response time and elapsed time per event."""
    return replace(cascade, structural=_structural(cascade.times, cascade.parents))


def validate_cascade(c: Cascade) -> None:
    n = len(c.times)
    if n == 0:
        raise ValidationError("cascade has no events", c.id)
    if c.parents.shape != (n,) or c.user.shape[0] != n:
        raise ValidationError("event arrays have inconsistent lengths", c.id)
    if c.parents[0] != -1 or np.count_nonzero(c.parents < 0) != 1:
        raise ValidationError("cascade must have exactly one root at index 0", c.id)
    if c.times[0] != 0.0:
        raise ValidationError(f"root time must be 0, got {c.times[0]}", c.id)
    if not np.all(np.isfinite(c.times)):
        raise ValidationError("non-finite event time", c.id)
    if np.any(np.diff(c.times) < 0):
        raise ValidationError("event times are not sorted", c.id)
    idx = np.arange(1, n)
    bad = np.flatnonzero(c.parents[1:] >= idx)
    if bad.size:
        raise ValidationError(f"event {bad[0] + 1}: parent out of range", c.id)
    if not np.isfinite(c.horizon) or c.horizon <= 0 or c.horizon < c.times[-1]:
        raise ValidationError(f"horizon {c.horizon} precedes last event {c.times[-1]}", c.id)
    if not (np.all(np.isfinite(c.user)) and np.all(np.isfinite(c.z))):
        raise ValidationError("non-finite covariate", c.id)
    if c.label not in (None, "true", "false"):
        raise ValidationError(f"label must be 'true', 'false' or null, got {c.label!r}", c.id)


# ---- JSON lines -------------------------------------------------------------


def _num(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"{what} must be a number, got {value!r}")
    return float(value)


def parse_record(record: dict, schema: CovariateSchema) -> Cascade:
    """Build a validated cascade from one decoded JSON record.

    Raw parent indices refer to the record's event order; events are stably
    sorted by time (root first among ties) and parents remapped.
    """
    cid = record["id"]
    if not isinstance(cid, str):
        raise TypeError("id must be a string")
    label = record.get("label")
    zrec = record.get("z") or {}
    z = np.array([_num(zrec[name], f"z.{name}") for name in schema.cascade_names])
    events = record["events"]
    if not isinstance(events, list) or not events:
        raise ValidationError("cascade has no events", cid)

    n = len(events)
    t = np.empty(n)
    raw_parent = np.full(n, -1, dtype=np.int64)
    user = np.empty((n, schema.n_u))
    for k, ev in enumerate(events):
        t[k] = _num(ev["t"], f"events[{k}].t")
        p = ev.get("parent")
        if p is not None:
            if isinstance(p, bool) or not isinstance(p, int):
                raise TypeError(f"events[{k}].parent must be an integer or null")
            if p < 0 or p >= n or p == k:
                raise ValidationError(f"event {k}: parent out of range ({p})", cid)
            raw_parent[k] = p
        xrec = ev.get("x") or {}
        for j, name in enumerate(schema.user_names):
            user[k, j] = _num(xrec[name], f"events[{k}].x.{name}")

    roots = np.flatnonzero(raw_parent < 0)
    if len(roots) != 1:
        raise ValidationError(f"expected exactly one root, found {len(roots)}", cid)
    is_child = np.ones(n, dtype=np.int64)
    is_child[roots[0]] = 0
    order = np.lexsort((np.arange(n), is_child, t))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    parents = np.where(raw_parent[order] < 0, -1, rank[np.maximum(raw_parent[order], 0)])
    times = t[order]

    for i in range(1, n):
        p = parents[i]
        if times[p] > times[i]:
            raise ValidationError(f"time inversion: event at t={times[i]} precedes its parent", cid)
        if p >= i:
            raise ValidationError(f"event at t={times[i]}: parent does not precede child", cid)

    horizon = record.get("horizon_hours")
    horizon = times[-1] if horizon is None else _num(horizon, "horizon_hours")
    if horizon == 0.0:
        # root-only cascade observed at an instant; keep a positive window
        horizon = np.finfo(float).tiny
    cascade = Cascade(cid, times, parents, user[order], z, horizon, label)
    validate_cascade(cascade)
    return cascade


def to_record(c: Cascade, schema: CovariateSchema) -> dict:
    def num(v):
        v = float(v)
        return int(v) if v.is_integer() and abs(v) < 2**53 else v

    return {
        "id": c.id,
        "label": c.label,
        "horizon_hours": num(c.horizon),
        "z": {name: num(c.z[j]) for j, name in enumerate(schema.cascade_names)},
        "events": [
            {
                "t": num(c.times[i]),
                "parent": None if c.parents[i] < 0 else int(c.parents[i]),
                "x": {name: num(c.user[i, j]) for j, name in enumerate(schema.user_names)},
            }
            for i in range(len(c))
        ],
    }


def ingest(stream: Iterable[str], schema: CovariateSchema | None = None) -> list[Cascade]:
    """Parse a JSON-lines stream into cascades; blank lines are skipped.

    Any malformed line aborts the whole read with the offending line number.
    """
    schema = schema or CovariateSchema()
    out = []
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        try:
            out.append(parse_record(record, schema))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
        except (KeyError, TypeError, AttributeError) as exc:
            raise ParseError(f"malformed record ({exc!r})", lineno) from exc
    return out


def read_jsonl(path, schema: CovariateSchema | None = None) -> list[Cascade]:
    with open(path, encoding="utf-8") as fh:
        return ingest(fh, schema)


def dump(cascades: Iterable[Cascade], fh: IO[str], schema: CovariateSchema | None = None) -> None:
    schema = schema or CovariateSchema()
    for c in cascades:
        fh.write(json.dumps(to_record(c, schema), separators=(", ", ": ")))
        fh.write("\n")


def write_jsonl(path, cascades: Iterable[Cascade], schema: CovariateSchema | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        dump(cascades, fh, schema)


# ---- Preprocessing ----------------------------------------------------------


def preprocess(cascades: Iterable[Cascade], min_size: int = 6,
               require_label: bool = False) -> list[Cascade]:
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    return [c for c in cascades
            if len(c) >= min_size and (c.label is not None or not require_label)]


def truncate(cascade: Cascade, time: float | None = None, count: int | None = None) -> Cascade:
    """Keep the root plus events up to ``time`` or the first ``count`` retweets.

    The returned cascade's horizon is the truncation time (or the time of the
    last kept retweet); truncating beyond the observed window is a no-op.
    """
    if (time is None) == (count is None):
        raise ValueError("specify exactly one of time or count")
    if time is not None:
        if not time > 0:
            raise ValueError("truncation time must be positive")
        if time >= cascade.horizon:
            return cascade
        n_keep = int(np.searchsorted(cascade.times, time, side="right"))
        horizon = float(time)
    else:
        if count < 1:
            raise ValueError("truncation count must be >= 1")
        if count + 1 >= len(cascade):
            return cascade
        n_keep = count + 1
        horizon = float(cascade.times[count])
        if horizon <= 0.0:
            horizon = np.finfo(float).tiny
    return Cascade(
        cascade.id,
        cascade.times[:n_keep],
        cascade.parents[:n_keep],
        cascade.user[:n_keep],
        cascade.z,
        horizon,
        cascade.label,
        cascade.structural[:n_keep],
    )


def balanced_sample(cascades: Sequence[Cascade], per_class: int,
                    seed: int | None = 0) -> tuple[list[Cascade], list[Cascade]]:
    """Draw ``per_class`` cascades of each label for training; the rest is the test set.

    Unlabeled cascades go to the test set.
    """
    rng = np.random.default_rng(seed)
    picked = np.zeros(len(cascades), dtype=bool)
    for label in ("false", "true"):
        idx = np.array([i for i, c in enumerate(cascades) if c.label == label], dtype=np.int64)
        if len(idx) < per_class:
            counts = {lab: sum(c.label == lab for c in cascades) for lab in ("false", "true")}
            raise ValueError(f"need {per_class} cascades per class, available: {counts}")
        picked[rng.choice(idx, size=per_class, replace=False)] = True
    train = [c for i, c in enumerate(cascades) if picked[i]]
    test = [c for i, c in enumerate(cascades) if not picked[i]]
    return train, test


# ---- Covariates -------------------------------------------------------------


def covariate_rows(z: np.ndarray, user: np.ndarray, structural: np.ndarray,
                   schema: CovariateSchema) -> np.ndarray:
    """Rows ``[z, x, y]`` with the schema's log1p transforms applied."""
    n = len(user)
    cols = [np.broadcast_to(z[: schema.n_c], (n, schema.n_c)), user[:, : schema.n_u]]
    if schema.n_s:
        idx = [STRUCTURAL_NAMES.index(name) for name in schema.structural_names]
        cols.append(structural[:, idx])
    X = np.concatenate(cols, axis=1)
    flags = np.array(schema.log_transform_flags, dtype=bool)
    if flags.any():
        X = X.copy()
        X[:, flags] = np.log1p(X[:, flags])
    return X


def design_matrix(cascade: Cascade, schema: CovariateSchema) -> np.ndarray:
    return covariate_rows(cascade.z, cascade.user, cascade.structural, schema)


@dataclass(frozen=True)
class Standardizer:
    """Affine map to zero-mean, unit-variance covariates (fit over training events)."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, cascades: Sequence[Cascade], schema: CovariateSchema) -> "Standardizer":
        X = np.concatenate([design_matrix(c, schema) for c in cascades], axis=0)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[~(scale > 1e-12)] = 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale

    def coefficients_to_raw(self, w: np.ndarray) -> np.ndarray:
        """Map ``[alpha, beta...]`` on the standardized scale to the raw scale.

        Works row-wise on a 2-D array of draws.
        """
        w = np.asarray(w, dtype=float)
        beta = w[..., 1:] / self.scale
        alpha = w[..., :1] - (beta * self.mean).sum(axis=-1, keepdims=True)
        return np.concatenate([alpha, beta], axis=-1)

    def coefficients_from_raw(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        beta = w[..., 1:] * self.scale
        alpha = w[..., :1] + (w[..., 1:] * self.mean).sum(axis=-1, keepdims=True)
        return np.concatenate([alpha, beta], axis=-1)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))
