"""Learning-rate schedule policies.

Every policy is an immutable value evaluated as a pure function of the
training iteration, so schedules can be validated, serialized, compared,
and replayed independently of any training loop.

Two families share one evaluation contract:

* decaying policies scale a base rate ``k`` by a decay factor ``g(t)``
  in ``(0, 1]``: STEP, NSTEP, EXP, INV, POLY (FIX is the degenerate
  ``g = 1`` case);
* cyclic policies oscillate between two positive bounds ``k0`` and
  ``k1``: ``lr(t) = |k0 - k1| * g(t) + min(k0, k1)`` with ``g(t)`` in
  ``[0, 1]``.  The base waveform is triangular (TRI), rectified sine
  (SIN), or raised cosine (COS); the ``*2`` variants halve the envelope
  every two cycle lengths and the ``*EXP`` variants multiply it by
  ``gamma ** t``.

COMPOSITE stitches non-composite policies over contiguous iteration
segments.  Each segment evaluates its inner policy on a segment-local
clock (iteration ``t - start``), so a cyclic stage restarts its phase at
every boundary and a POLY stage without an explicit ``max_iter`` decays
over its own segment length.

Construction is permissive: range violations (for example ``gamma``
outside ``(0, 1)``) are reported by :func:`validate_policy` as data, not
raised, so callers can collect every problem at once.  Evaluation
assumes a valid policy and raises :class:`ScheduleError` only for
out-of-range iterations.
"""
from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Union

from .errors import PolicyFormatError, ScheduleError

__all__ = [
    "Fix",
    "Step",
    "NStep",
    "Exp",
    "Inv",
    "Poly",
    "Cyclic",
    "Segment",
    "Composite",
    "LRPolicy",
    "ScheduleSeries",
    "CYCLIC_KINDS",
    "POLICY_TYPES",
    "validate_policy",
    "eval_lr",
    "schedule_series",
    "series_to_csv",
    "policy_to_doc",
    "policy_from_doc",
    "parse_policy",
    "serialize_policy",
]

# Cyclic waveform names: base waveform plus envelope suffix.
CYCLIC_KINDS = (
    "TRI", "TRI2", "TRIEXP",
    "SIN", "SIN2", "SINEXP",
    "COS", "COS2", "COSEXP",
)
_EXP_KINDS = ("TRIEXP", "SINEXP", "COSEXP")
_HALVING_KINDS = ("TRI2", "SIN2", "COS2")


@dataclass(frozen=True)
class Fix:
    """Constant learning rate ``k``."""

    k: float


@dataclass(frozen=True)
class Step:
    """``k * gamma ** floor(t / l)``: drop by ``gamma`` every ``l`` iterations."""

    k: float
    gamma: float
    l: int


@dataclass(frozen=True)
class NStep:
    """``k * gamma ** i`` where ``i`` counts boundaries at or below ``t``.

    ``boundaries`` is a strictly increasing list of positive iteration
    numbers; before the first boundary the factor is 1, and past the last
    boundary the factor stays at ``gamma ** len(boundaries)``.
    """

    k: float
    gamma: float
    boundaries: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "boundaries", tuple(self.boundaries))


@dataclass(frozen=True)
class Exp:
    """``k * gamma ** t``: per-iteration exponential decay."""

    k: float
    gamma: float


@dataclass(frozen=True)
class Inv:
    """``k / (1 + t * gamma) ** p``: inverse-polynomial decay."""

    k: float
    gamma: float
    p: float


@dataclass(frozen=True)
class Poly:
    """``k * (1 - t / max_iter) ** p``: polynomial decay to zero.

    ``max_iter = None`` binds the horizon at evaluation time to the
    run's total iterations (or, inside a COMPOSITE, to the segment
    length).  Evaluating past ``max_iter`` is an error.
    """

    k: float
    p: float
    max_iter: int | None = None


@dataclass(frozen=True)
class Cyclic:
    """Cyclic policy oscillating between ``k0`` and ``k1``.

    ``kind`` selects the waveform (see module docstring); ``l`` is the
    half-cycle length in iterations, so one full cycle spans ``2 * l``.
    ``gamma`` is required for the ``*EXP`` kinds and forbidden otherwise.
    """

    kind: str
    k0: float
    k1: float
    l: int
    gamma: float | None = None


@dataclass(frozen=True)
class Segment:
    """Half-open iteration span ``[start, end)`` driven by one inner policy."""

    start: int
    end: int
    policy: "LRPolicy"


@dataclass(frozen=True)
class Composite:
    """Contiguous, ordered segments covering ``[0, total_iters)``."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))


LRPolicy = Union[Fix, Step, NStep, Exp, Inv, Poly, Cyclic, Composite]
POLICY_TYPES = (Fix, Step, NStep, Exp, Inv, Poly, Cyclic, Composite)
# Families whose lr is non-increasing in t (used for cheap pointwise checks).
MONOTONE_TYPES = (Fix, Step, NStep, Exp, Inv, Poly)


@dataclass(frozen=True)
class ScheduleSeries:
    """Sampled (iteration, lr) points for one policy."""

    policy: LRPolicy
    points: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple((int(t), float(v)) for t, v in self.points))


# ---------------------------------------------------------------------------
# validation

def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_rate(out: list[str], name: str, value) -> None:
    if not _is_num(value) or not math.isfinite(value) or value <= 0.0:
        out.append(f"{name} must be a positive finite number, got {value!r}")


def _check_gamma_unit(out: list[str], value) -> None:
    if not _is_num(value) or not (0.0 < value < 1.0):
        out.append(f"gamma must lie in (0, 1), got {value!r}")


def validate_policy(policy: LRPolicy, total_iters: int) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid).

    ``total_iters`` is the evaluation horizon the policy must serve:
    COMPOSITE coverage is checked against ``[0, total_iters)`` and an
    explicit POLY ``max_iter`` must reach at least ``total_iters - 1``.
    """
    if not _is_int(total_iters) or total_iters < 1:
        raise ScheduleError(f"total_iters must be a positive integer, got {total_iters!r}")
    out: list[str] = []
    _validate_into(policy, total_iters, out, prefix="")
    return out


def _validate_into(policy: LRPolicy, total: int, out: list[str], prefix: str) -> None:
    before = len(out)
    if isinstance(policy, Fix):
        _check_rate(out, "k", policy.k)
    elif isinstance(policy, Step):
        _check_rate(out, "k", policy.k)
        _check_gamma_unit(out, policy.gamma)
        if not _is_int(policy.l) or policy.l < 1:
            out.append(f"l must be an integer >= 1, got {policy.l!r}")
    elif isinstance(policy, NStep):
        _check_rate(out, "k", policy.k)
        _check_gamma_unit(out, policy.gamma)
        bs = policy.boundaries
        if len(bs) == 0:
            out.append("boundaries must not be empty")
        elif not all(_is_int(b) for b in bs):
            out.append(f"boundaries must be integers, got {list(bs)!r}")
        elif bs[0] < 1 or any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
            out.append(f"boundaries must be strictly increasing positive integers, got {list(bs)!r}")
    elif isinstance(policy, Exp):
        _check_rate(out, "k", policy.k)
        _check_gamma_unit(out, policy.gamma)
    elif isinstance(policy, Inv):
        _check_rate(out, "k", policy.k)
        # INV admits any positive gamma; it is a time scale, not a ratio.
        _check_rate(out, "gamma", policy.gamma)
        _check_rate(out, "p", policy.p)
    elif isinstance(policy, Poly):
        _check_rate(out, "k", policy.k)
        _check_rate(out, "p", policy.p)
        if policy.max_iter is not None:
            if not _is_int(policy.max_iter) or policy.max_iter < 1:
                out.append(f"max_iter must be an integer >= 1, got {policy.max_iter!r}")
            elif policy.max_iter < total - 1:
                out.append(
                    f"max_iter={policy.max_iter} is shorter than the horizon: "
                    f"evaluation past it is an error (need >= {total - 1})"
                )
    elif isinstance(policy, Cyclic):
        if policy.kind not in CYCLIC_KINDS:
            out.append(f"unknown cyclic kind {policy.kind!r}")
        _check_rate(out, "k0", policy.k0)
        _check_rate(out, "k1", policy.k1)
        if not _is_int(policy.l) or policy.l < 1:
            out.append(f"l must be an integer >= 1, got {policy.l!r}")
        if policy.kind in _EXP_KINDS:
            if policy.gamma is None:
                out.append(f"{policy.kind} requires gamma")
            else:
                _check_gamma_unit(out, policy.gamma)
        elif policy.gamma is not None:
            out.append(f"{policy.kind} does not take gamma")
    elif isinstance(policy, Composite):
        _validate_composite(policy, total, out)
    else:
        out.append(f"not a policy: {policy!r}")
    if prefix:
        for i in range(before, len(out)):
            out[i] = prefix + out[i]


def _validate_composite(policy: Composite, total: int, out: list[str]) -> None:
    segs = policy.segments
    if len(segs) == 0:
        out.append("composite must have at least one segment")
        return
    for idx, seg in enumerate(segs):
        tag = f"segment {idx}: "
        if not _is_int(seg.start) or not _is_int(seg.end):
            out.append(tag + f"start/end must be integers, got {seg.start!r}/{seg.end!r}")
            continue
        if seg.start < 0 or seg.end <= seg.start:
            out.append(tag + f"need 0 <= start < end, got [{seg.start}, {seg.end})")
        if isinstance(seg.policy, Composite):
            out.append(tag + "nested composite segments are not allowed")
        elif isinstance(seg.policy, POLICY_TYPES):
            _validate_into(seg.policy, max(seg.end - seg.start, 1), out, prefix=tag)
        else:
            out.append(tag + f"not a policy: {seg.policy!r}")
    starts_ok = all(_is_int(s.start) and _is_int(s.end) for s in segs)
    if not starts_ok:
        return
    if segs[0].start != 0:
        out.append(f"segments must start at 0, first starts at {segs[0].start}")
    for a, b in zip(segs, segs[1:]):
        if b.start != a.end:
            kind = "overlap" if b.start < a.end else "gap"
            out.append(f"{kind} between segment ending at {a.end} and segment starting at {b.start}")
    if segs[-1].end != total:
        out.append(f"segments do not cover [0, {total}): last segment ends at {segs[-1].end}")


# ---------------------------------------------------------------------------
# evaluation

def eval_lr(policy: LRPolicy, t: int, total_iters: int) -> float:
    """Learning rate of ``policy`` at iteration ``t`` within ``[0, total_iters)``.

    Assumes ``validate_policy(policy, total_iters)`` passes; raises
    :class:`ScheduleError` for an out-of-range ``t`` or a POLY evaluated
    past its ``max_iter``.
    """
    if not _is_int(t):
        raise ScheduleError(f"iteration must be an integer, got {t!r}")
    if t < 0 or t >= total_iters:
        raise ScheduleError(f"iteration {t} outside [0, {total_iters})")
    return _eval(policy, t, total_iters)


def _eval(policy: LRPolicy, t: int, total: int) -> float:
    if isinstance(policy, Fix):
        return policy.k
    if isinstance(policy, Step):
        return policy.k * policy.gamma ** (t // policy.l)
    if isinstance(policy, NStep):
        return policy.k * policy.gamma ** bisect_right(policy.boundaries, t)
    if isinstance(policy, Exp):
        return policy.k * policy.gamma ** t
    if isinstance(policy, Inv):
        return policy.k / (1.0 + t * policy.gamma) ** policy.p
    if isinstance(policy, Poly):
        horizon = policy.max_iter if policy.max_iter is not None else total
        if t > horizon:
            raise ScheduleError(f"POLY evaluated at t={t} past max_iter={horizon}")
        # (horizon - t) / horizon equals 1 - t / horizon with integer
        # subtraction done exactly, avoiding cancellation near the end.
        return policy.k * ((horizon - t) / horizon) ** policy.p
    if isinstance(policy, Cyclic):
        return _eval_cyclic(policy, t)
    if isinstance(policy, Composite):
        for seg in policy.segments:
            if seg.start <= t < seg.end:
                return _eval(seg.policy, t - seg.start, seg.end - seg.start)
        raise ScheduleError(f"iteration {t} falls outside every composite segment")
    raise ScheduleError(f"not a policy: {policy!r}")


def _eval_cyclic(policy: Cyclic, t: int) -> float:
    kind, l = policy.kind, policy.l
    if kind.startswith("TRI"):
        g = (2.0 / math.pi) * abs(math.asin(math.sin(math.pi * t / (2.0 * l))))
    elif kind.startswith("SIN"):
        g = abs(math.sin(math.pi * t / (2.0 * l)))
    else:  # COS*
        g = 0.5 * (1.0 + math.cos(math.pi * t / l))
    if kind in _HALVING_KINDS:
        g *= 0.5 ** (t // (2 * l))
    elif kind in _EXP_KINDS:
        g *= policy.gamma ** t
    # Rounding in asin/sin can push g a hair outside [0, 1]; the lr must
    # stay inside the [min(k0,k1), max(k0,k1)] band exactly.
    g = min(max(g, 0.0), 1.0)
    lo = min(policy.k0, policy.k1)
    hi = max(policy.k0, policy.k1)
    return min(max(abs(policy.k0 - policy.k1) * g + lo, lo), hi)


def schedule_series(policy: LRPolicy, total_iters: int, stride: int = 1) -> ScheduleSeries:
    """Sample ``eval_lr`` at ``t = 0, stride, 2*stride, ...`` below ``total_iters``."""
    if not _is_int(stride) or stride < 1:
        raise ScheduleError(f"stride must be an integer >= 1, got {stride!r}")
    pts = tuple((t, eval_lr(policy, t, total_iters)) for t in range(0, total_iters, stride))
    return ScheduleSeries(policy=policy, points=pts)


def _fmt(x: float) -> str:
    # repr is the shortest decimal that parses back to the same double.
    return repr(float(x))


def series_to_csv(series: ScheduleSeries) -> str:
    """Render a series as ``t,lr`` CSV with full-precision decimals."""
    lines = ["t,lr"]
    lines.extend(f"{t},{_fmt(v)}" for t, v in series.points)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# JSON documents

_DECAY_FIELDS = {
    "FIX": ("k",),
    "STEP": ("k", "gamma", "l"),
    "NSTEP": ("k", "gamma", "boundaries"),
    "EXP": ("k", "gamma"),
    "INV": ("k", "gamma", "p"),
    "POLY": ("k", "p"),
}


def policy_to_doc(policy: LRPolicy) -> dict:
    """Plain-dict document for a policy, suitable for JSON embedding."""
    if isinstance(policy, Fix):
        return {"type": "FIX", "k": policy.k}
    if isinstance(policy, Step):
        return {"type": "STEP", "k": policy.k, "gamma": policy.gamma, "l": policy.l}
    if isinstance(policy, NStep):
        return {"type": "NSTEP", "k": policy.k, "gamma": policy.gamma,
                "boundaries": list(policy.boundaries)}
    if isinstance(policy, Exp):
        return {"type": "EXP", "k": policy.k, "gamma": policy.gamma}
    if isinstance(policy, Inv):
        return {"type": "INV", "k": policy.k, "gamma": policy.gamma, "p": policy.p}
    if isinstance(policy, Poly):
        doc = {"type": "POLY", "k": policy.k, "p": policy.p}
        if policy.max_iter is not None:
            doc["max_iter"] = policy.max_iter
        return doc
    if isinstance(policy, Cyclic):
        doc = {"type": policy.kind, "k0": policy.k0, "k1": policy.k1, "l": policy.l}
        if policy.kind in _EXP_KINDS:
            doc["gamma"] = policy.gamma
        return doc
    if isinstance(policy, Composite):
        return {"type": "COMPOSITE", "segments": [
            {"start": s.start, "end": s.end, "policy": policy_to_doc(s.policy)}
            for s in policy.segments
        ]}
    raise PolicyFormatError(f"not a policy: {policy!r}")


def _want(doc: dict, name: str, kind: str):
    if name not in doc:
        raise PolicyFormatError(f"{kind} is missing field {name!r}")
    return doc[name]


def _num_field(doc: dict, name: str, kind: str) -> float:
    v = _want(doc, name, kind)
    if not _is_num(v):
        raise PolicyFormatError(f"{kind} field {name!r} must be a number, got {v!r}")
    return float(v)


def _int_field(doc: dict, name: str, kind: str) -> int:
    v = _want(doc, name, kind)
    if not _is_int(v):
        raise PolicyFormatError(f"{kind} field {name!r} must be an integer, got {v!r}")
    return v


def _reject_extras(doc: dict, kind: str, allowed: set[str]) -> None:
    extras = sorted(set(doc) - allowed)
    if extras:
        raise PolicyFormatError(f"{kind} has unknown fields: {', '.join(extras)}")


def policy_from_doc(doc) -> LRPolicy:
    """Parse a plain-dict policy document; inverse of :func:`policy_to_doc`.

    Structural problems (unknown type, missing fields, extraneous
    fields, wrong JSON types) raise :class:`PolicyFormatError`.  Range
    checks are left to :func:`validate_policy`.
    """
    if not isinstance(doc, dict):
        raise PolicyFormatError(f"policy document must be an object, got {type(doc).__name__}")
    kind = doc.get("type")
    if kind is None:
        raise PolicyFormatError("policy document is missing 'type'")
    if kind == "FIX":
        _reject_extras(doc, kind, {"type", "k"})
        return Fix(k=_num_field(doc, "k", kind))
    if kind == "STEP":
        _reject_extras(doc, kind, {"type", "k", "gamma", "l"})
        return Step(k=_num_field(doc, "k", kind), gamma=_num_field(doc, "gamma", kind),
                    l=_int_field(doc, "l", kind))
    if kind == "NSTEP":
        _reject_extras(doc, kind, {"type", "k", "gamma", "boundaries"})
        bs = _want(doc, "boundaries", kind)
        if not isinstance(bs, (list, tuple)) or not all(_is_int(b) for b in bs):
            raise PolicyFormatError(f"NSTEP field 'boundaries' must be a list of integers, got {bs!r}")
        return NStep(k=_num_field(doc, "k", kind), gamma=_num_field(doc, "gamma", kind),
                     boundaries=tuple(bs))
    if kind == "EXP":
        _reject_extras(doc, kind, {"type", "k", "gamma"})
        return Exp(k=_num_field(doc, "k", kind), gamma=_num_field(doc, "gamma", kind))
    if kind == "INV":
        _reject_extras(doc, kind, {"type", "k", "gamma", "p"})
        return Inv(k=_num_field(doc, "k", kind), gamma=_num_field(doc, "gamma", kind),
                   p=_num_field(doc, "p", kind))
    if kind == "POLY":
        _reject_extras(doc, kind, {"type", "k", "p", "max_iter"})
        max_iter = _int_field(doc, "max_iter", kind) if "max_iter" in doc else None
        return Poly(k=_num_field(doc, "k", kind), p=_num_field(doc, "p", kind), max_iter=max_iter)
    if kind in CYCLIC_KINDS:
        allowed = {"type", "k0", "k1", "l"}
        gamma = None
        if kind in _EXP_KINDS:
            allowed.add("gamma")
            gamma = _num_field(doc, "gamma", kind)
        _reject_extras(doc, kind, allowed)
        return Cyclic(kind=kind, k0=_num_field(doc, "k0", kind), k1=_num_field(doc, "k1", kind),
                      l=_int_field(doc, "l", kind), gamma=gamma)
    if kind == "COMPOSITE":
        _reject_extras(doc, kind, {"type", "segments"})
        segs = _want(doc, "segments", kind)
        if not isinstance(segs, (list, tuple)) or len(segs) == 0:
            raise PolicyFormatError("COMPOSITE field 'segments' must be a non-empty list")
        parsed = []
        for i, seg in enumerate(segs):
            if not isinstance(seg, dict):
                raise PolicyFormatError(f"COMPOSITE segment {i} must be an object")
            _reject_extras(seg, f"COMPOSITE segment {i}", {"start", "end", "policy"})
            inner = policy_from_doc(_want(seg, "policy", f"COMPOSITE segment {i}"))
            if isinstance(inner, Composite):
                raise PolicyFormatError(f"COMPOSITE segment {i} must not nest another composite")
            parsed.append(Segment(start=_int_field(seg, "start", f"COMPOSITE segment {i}"),
                                  end=_int_field(seg, "end", f"COMPOSITE segment {i}"),
                                  policy=inner))
        return Composite(segments=tuple(parsed))
    raise PolicyFormatError(f"unknown policy type {kind!r}")


def parse_policy(text: str) -> LRPolicy:
    """Parse a JSON policy document string."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyFormatError(f"policy document is not valid JSON: {exc}") from exc
    return policy_from_doc(doc)


def serialize_policy(policy: LRPolicy) -> str:
    """Serialize a policy to a single-line JSON document.

    Key order is fixed by construction, so equal policies serialize to
    identical bytes; ranking code uses this string as a deterministic
    tie-breaker.
    """
    return json.dumps(policy_to_doc(policy), separators=(", ", ": "))
