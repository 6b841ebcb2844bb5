"""Step-size estimation from parameter snapshots and policy verification.

The estimator treats three consecutive parameter snapshots as two
successive update displacements and asks what rate would have jumped
straight to the local minimum of the quadratic model they trace out:

    lr_opt = applied_lr * ||d1||_1 / ||d1 - d2||_1,
    d1 = theta_mid - theta_prev,  d2 = theta_next - theta_mid.

On the scalar quadratic ``0.5 * lam * theta**2`` under plain gradient
descent this recovers exactly ``1 / lam`` whatever (stable) rate was
applied.  When the displacement difference is numerically nil the
estimate is reported as singular rather than a garbage quotient.

``verify_policy`` runs the three-phase acceptance workflow for a
candidate policy against a target accuracy: (1) train the candidate and
accept it if it meets the target; (2) otherwise rank the stored policies
for the same dataset and model, re-train any that were measured under a
different optimizer, and hand back the best one if it meets the target;
(3) otherwise bracket the rate interval with a range test, search a
small cross-family grid inside it, and hand back the best find.  All
fresh trials are written back to the store.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VerifyError
from .policydb import DbKey, PolicyDb
from .schedules import LRPolicy, serialize_policy
from .tasks import Task
from .training import TrialRecord, train
from .tuning import grid_search, lr_range_test, mean_peak_by_policy, standard_candidates

__all__ = ["LrEstimate", "estimate_optimal_lr", "optimal_lr_trace",
           "Verdict", "verify_policy", "verdict_to_doc"]


@dataclass(frozen=True)
class LrEstimate:
    """One snapshot-triple estimate; ``lr_opt`` is None when singular."""

    t: int
    applied_lr: float
    lr_opt: float | None

    @property
    def singular(self) -> bool:
        return self.lr_opt is None


def estimate_optimal_lr(theta_prev, theta_mid, theta_next, applied_lr: float,
                        t: int = 0) -> LrEstimate:
    """Estimate the locally optimal rate from three consecutive snapshots.

    ``applied_lr`` must be the rate of the first step taken after
    ``theta_mid`` was captured.  The denominator guard scales with the
    displacement so pure rescaling of the parameters cannot flip a
    regular estimate into a singular one or back.
    """
    p = np.asarray(theta_prev, dtype=float)
    m = np.asarray(theta_mid, dtype=float)
    n = np.asarray(theta_next, dtype=float)
    if not (p.shape == m.shape == n.shape):
        raise VerifyError(f"snapshot shapes differ: {p.shape}, {m.shape}, {n.shape}")
    if not (np.isfinite(applied_lr) and applied_lr > 0.0):
        raise VerifyError(f"applied_lr must be positive and finite, got {applied_lr!r}")
    if not (np.isfinite(p).all() and np.isfinite(m).all() and np.isfinite(n).all()):
        raise VerifyError("non-finite snapshot")
    num = float(np.abs(m - p).sum())
    den = float(np.abs(2.0 * m - p - n).sum())
    guard = 1e-12 * max(1.0, num)
    if den < guard:
        return LrEstimate(t=t, applied_lr=float(applied_lr), lr_opt=None)
    return LrEstimate(t=t, applied_lr=float(applied_lr), lr_opt=float(applied_lr) * num / den)


def optimal_lr_trace(task: Task, policy: LRPolicy, *, budget_iters: int, stride: int = 1,
                     seed: int = 0, optimizer: str = "sgd",
                     eval_every: int | None = None) -> list[LrEstimate]:
    """Train once with snapshots every ``stride`` steps and estimate per triple.

    Estimates land at the middle snapshot of each consecutive triple and
    use the rate applied by the first step after it.  Needs
    ``budget_iters >= 3 * stride`` so at least one triple exists even if
    the final snapshot is lost to divergence.
    """
    if stride < 1:
        raise VerifyError(f"stride must be >= 1, got {stride}")
    if budget_iters < 3 * stride:
        raise VerifyError(f"budget_iters={budget_iters} too short for stride={stride}; "
                          f"need at least {3 * stride}")
    record = train(task, policy, budget_iters=budget_iters, seed=seed, optimizer=optimizer,
                   eval_every=eval_every, snapshot_stride=stride)
    snaps = record.snapshots
    if len(snaps) < 3:
        raise VerifyError(f"only {len(snaps)} snapshots captured (diverged early?); need 3")
    applied = dict(record.lr_trace.points)
    out = []
    for (_, prev), (t_mid, mid), (_, nxt) in zip(snaps, snaps[1:], snaps[2:]):
        out.append(estimate_optimal_lr(prev, mid, nxt, applied[t_mid], t=t_mid))
    return out


# ---------------------------------------------------------------------------
# three-phase verification

@dataclass(frozen=True)
class Verdict:
    """Outcome of :func:`verify_policy`.

    ``verified`` states whether the *candidate* met the target in phase
    1; ``replacement`` (when set) is a policy whose measured accuracy
    beats the candidate, found in whichever phase ``phase_reached``
    reports.  ``evidence`` holds every trial consulted.
    """

    phase_reached: int
    verified: bool
    target_top1: float
    candidate: LRPolicy
    candidate_top1: float
    replacement: LRPolicy | None
    replacement_top1: float | None
    evidence: tuple[TrialRecord, ...]


def _mean(xs) -> float:
    xs = list(xs)
    return sum(xs) / len(xs)


def verify_policy(candidate: LRPolicy, task: Task, target_top1: float, *,
                  budget_iters: int, db: PolicyDb, n_top: int = 3, seeds=(0,),
                  optimizer: str = "momentum", eval_every: int | None = None,
                  workers: int = 1, range_points: int = 6,
                  range_budgets_epochs=(1,), stable: bool = False) -> Verdict:
    """Three-phase check of ``candidate`` against ``target_top1``.

    Monotone in the target: lowering the target can only turn a verdict
    from unverified to verified, never the reverse, because the measured
    records do not depend on it.
    """
    if n_top < 1:
        raise VerifyError(f"n_top must be >= 1, got {n_top}")
    seeds = list(seeds)
    if not seeds:
        raise VerifyError("verify_policy needs at least one seed")
    if not task.has_accuracy:
        raise VerifyError(f"task {task.task_id!r} has no accuracy metric to verify against")
    key = DbKey(dataset_id=task.task_id, model_id=task.model_id, optimizer_id=optimizer)

    def measure(policy: LRPolicy) -> list[TrialRecord]:
        recs = grid_search(task, [policy], budget_iters=budget_iters, seeds=seeds,
                           optimizer=optimizer, eval_every=eval_every, workers=workers)
        for rec in recs:
            db.put(key, rec, stable=stable)
        return recs

    evidence: list[TrialRecord] = []
    cand_records = measure(candidate)
    evidence.extend(cand_records)
    cand_top1 = _mean(r.peak_top1 or 0.0 for r in cand_records)
    verified = cand_top1 >= target_top1

    # Consult the store for the same dataset and model under any
    # optimizer; policies measured under a different optimizer are
    # re-trained here rather than trusted across setups.
    cand_text = serialize_policy(candidate)
    stored = db.query_partial(dataset_id=task.task_id, model_id=task.model_id)
    by_policy: dict[str, tuple[LRPolicy, list, bool]] = {}
    for db_rec in stored:
        text = serialize_policy(db_rec.record.policy)
        if text == cand_text or db_rec.record.peak_top1 is None:
            continue
        policy, peaks, measured_here = by_policy.get(text, (db_rec.record.policy, [], False))
        peaks.append(db_rec.record.peak_top1)
        measured_here = measured_here or db_rec.key == key
        by_policy[text] = (policy, peaks, measured_here)
    ranked = sorted(((policy, _mean(peaks), text, here)
                     for text, (policy, peaks, here) in by_policy.items()),
                    key=lambda row: (-row[1], row[2]))[:n_top]

    best_policy: LRPolicy | None = None
    best_top1 = -float("inf")
    for policy, stored_top1, _, measured_here in ranked:
        if measured_here:
            top1 = stored_top1
        else:
            fresh = measure(policy)
            evidence.extend(fresh)
            top1 = _mean(r.peak_top1 or 0.0 for r in fresh)
        if top1 > best_top1:
            best_policy, best_top1 = policy, top1

    if verified:
        better = best_policy is not None and best_top1 > cand_top1
        return Verdict(phase_reached=1, verified=True, target_top1=target_top1,
                       candidate=candidate, candidate_top1=cand_top1,
                       replacement=best_policy if better else None,
                       replacement_top1=best_top1 if better else None,
                       evidence=tuple(evidence))

    if best_policy is not None and best_top1 >= target_top1:
        return Verdict(phase_reached=2, verified=False, target_top1=target_top1,
                       candidate=candidate, candidate_top1=cand_top1,
                       replacement=best_policy, replacement_top1=best_top1,
                       evidence=tuple(evidence))

    # Phase 3: bracket the rate interval and search a fresh small grid.
    result = lr_range_test(task, 1e-4, 1.0, range_points, range_budgets_epochs,
                           seed=seeds[0], optimizer=optimizer, eval_every=eval_every,
                           workers=workers)
    fresh_candidates = [c for c in standard_candidates(result.recommended, budget_iters)
                        if serialize_policy(c) != cand_text]
    if not fresh_candidates:
        raise VerifyError("phase-3 search grid is empty")
    records = grid_search(task, fresh_candidates, budget_iters=budget_iters, seeds=seeds,
                          optimizer=optimizer, eval_every=eval_every, workers=workers)
    for rec in records:
        db.put(key, rec, stable=stable)
    evidence.extend(records)
    scored = mean_peak_by_policy(records)
    best_policy, best_top1 = scored[0]
    if best_policy is not None and best_top1 < cand_top1:
        best_policy, best_top1 = None, None  # nothing better was found
    return Verdict(phase_reached=3, verified=False, target_top1=target_top1,
                   candidate=candidate, candidate_top1=cand_top1,
                   replacement=best_policy, replacement_top1=best_top1,
                   evidence=tuple(evidence))


def verdict_to_doc(verdict: Verdict, *, stable: bool = False, series_cap: int = 128) -> dict:
    from .schedules import policy_to_doc
    from .training import record_to_doc
    return {
        "phase_reached": verdict.phase_reached,
        "verified": verdict.verified,
        "target_top1": verdict.target_top1,
        "candidate": policy_to_doc(verdict.candidate),
        "candidate_top1": verdict.candidate_top1,
        "replacement": policy_to_doc(verdict.replacement) if verdict.replacement is not None else None,
        "replacement_top1": verdict.replacement_top1,
        "evidence": [record_to_doc(r, stable=stable, series_cap=series_cap)
                     for r in verdict.evidence],
    }
