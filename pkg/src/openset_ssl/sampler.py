"""Two-stage OOD-aware sampler over the unlabeled pool.

Stage A picks a super-cluster with probability proportional to
``1 / (CIS + delta_w)``; stage B picks one of its hard-assigned samples with
probability proportional to ``1 / (OOD + delta_w)``. Both stages use alias
tables, so a draw costs O(1) once the plan is built.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ValidationError
from .scoring import OodScoreTable


def merge_super_clusters(cis, tolerance=1e-9, mass=None):
    """Single-link merge of clusters whose CIS values chain within ``tolerance``.

    Returns ``(groups, group_cis)``; groups are sorted by CIS and each holds
    cluster indices in ascending order. Group CIS is the mass-weighted mean
    of member CIS (plain mean when ``mass`` is None or sums to zero).
    """
    cis = np.asarray(cis, dtype=np.float64)
    if not np.all(np.isfinite(cis)):
        raise ValidationError("CIS values must be finite")
    if cis.size == 0:
        return [], np.zeros(0)
    mass = np.ones_like(cis) if mass is None else np.asarray(mass, dtype=np.float64)
    order = np.argsort(cis, kind="stable")
    groups = [[int(order[0])]]
    for prev, cur in zip(order[:-1], order[1:]):
        if cis[cur] - cis[prev] <= tolerance:
            groups[-1].append(int(cur))
        else:
            groups.append([int(cur)])
    groups = [sorted(g) for g in groups]
    group_cis = []
    for g in groups:
        m = mass[g]
        group_cis.append(float(np.average(cis[g], weights=m)) if m.sum() > 0 else float(cis[g].mean()))
    return groups, np.array(group_cis)


@dataclass
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @classmethod
    def from_weights(cls, weights):
        w = np.asarray(weights, dtype=np.float64)
        return cls(*kernels.alias_build(w / w.sum()))

    def probabilities(self) -> np.ndarray:
        """Exact single-draw probability of each outcome implied by the table."""
        n = self.prob.shape[0]
        p = self.prob.copy()
        spill = 1.0 - self.prob
        np.add.at(p, self.alias, np.where(self.alias != np.arange(n), spill, 0.0))
        return p / n

    def draw(self, u_slot, u_coin):
        return kernels.alias_draw(self.prob, self.alias, u_slot, u_coin)


@dataclass
class SamplerPlan:
    groups: list  # cluster indices per super-cluster
    group_cis: np.ndarray
    group_weights: np.ndarray
    members: list  # unlabeled ids per group
    member_scores: list  # OOD score per member
    member_weights: list
    group_table: AliasTable = field(repr=False)
    member_tables: list = field(repr=False)
    tolerance: float = 1e-9
    delta_w: float = 1e-3
    seed: int = 0

    @property
    def pool_ids(self):
        return [i for m in self.members for i in m]

    def expected_ood(self) -> float:
        """Exact mean OOD score of one draw."""
        return float(sum(w * (v @ s) for w, v, s in zip(self.group_weights, self.member_weights, self.member_scores)))

    def pool_mean_ood(self) -> float:
        return float(np.mean(np.concatenate(self.member_scores)))

    def draw(self, batch_size, rng):
        return draw_batch(self, batch_size, rng)[0]

    def to_dict(self):
        return {
            "tolerance": self.tolerance,
            "delta_w": self.delta_w,
            "seed": self.seed,
            "groups": [
                {
                    "clusters": g,
                    "cis": float(c),
                    "weight": float(w),
                    "members": list(m),
                    "member_scores": s.tolist(),
                    "member_weights": v.tolist(),
                    "alias_prob": t.prob.tolist(),
                    "alias_index": t.alias.tolist(),
                }
                for g, c, w, m, s, v, t in zip(
                    self.groups,
                    self.group_cis,
                    self.group_weights,
                    self.members,
                    self.member_scores,
                    self.member_weights,
                    self.member_tables,
                )
            ],
            "group_alias_prob": self.group_table.prob.tolist(),
            "group_alias_index": self.group_table.alias.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        gs = d["groups"]
        return cls(
            groups=[list(g["clusters"]) for g in gs],
            group_cis=np.array([g["cis"] for g in gs]),
            group_weights=np.array([g["weight"] for g in gs]),
            members=[list(g["members"]) for g in gs],
            member_scores=[np.array(g["member_scores"]) for g in gs],
            member_weights=[np.array(g["member_weights"]) for g in gs],
            group_table=AliasTable(np.array(d["group_alias_prob"]), np.array(d["group_alias_index"], dtype=np.intp)),
            member_tables=[
                AliasTable(np.array(g["alias_prob"]), np.array(g["alias_index"], dtype=np.intp)) for g in gs
            ],
            tolerance=d["tolerance"],
            delta_w=d["delta_w"],
            seed=d["seed"],
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_plan(table: OodScoreTable, tolerance=1e-9, delta_w=1e-3, seed=0) -> SamplerPlan:
    if delta_w <= 0:
        raise ValidationError("delta_w must be > 0")
    pool = table.mask("unlabeled")
    if not np.any(pool):
        raise ValidationError("score table has no unlabeled samples to sample from")
    groups, group_cis = merge_super_clusters(table.cis, tolerance, table.cluster_mass)
    ids = np.array(table.ids, dtype=object)[pool]
    clusters = table.cluster[pool]
    scores = table.ood_score[pool]
    kept = []
    for g, gc in zip(groups, group_cis):
        sel = np.isin(clusters, g)
        if not np.any(sel):
            continue  # no hard-assigned members: dropped
        w = 1.0 / (scores[sel] + delta_w)
        kept.append((g, gc, list(ids[sel]), scores[sel].copy(), w / w.sum()))
    gw = np.array([1.0 / (gc + delta_w) for _, gc, *_ in kept])
    gw = gw / gw.sum()
    return SamplerPlan(
        groups=[k[0] for k in kept],
        group_cis=np.array([k[1] for k in kept]),
        group_weights=gw,
        members=[k[2] for k in kept],
        member_scores=[k[3] for k in kept],
        member_weights=[k[4] for k in kept],
        group_table=AliasTable.from_weights(gw),
        member_tables=[AliasTable.from_weights(k[4]) for k in kept],
        tolerance=float(tolerance),
        delta_w=float(delta_w),
        seed=int(seed),
    )


def draw_batch(plan: SamplerPlan, batch_size, rng: np.random.Generator):
    """Draw ``batch_size`` ids i.i.d. with replacement; advances ``rng``.

    Returns ``(ids, groups, positions)`` where ``positions`` indexes each id
    within its group.
    """
    if batch_size == 0:
        return [], np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    u = rng.random((4, batch_size))
    groups = plan.group_table.draw(u[0], u[1])
    pos = np.empty(batch_size, dtype=np.intp)
    for g in np.unique(groups):
        sel = groups == g
        pos[sel] = plan.member_tables[g].draw(u[2, sel], u[3, sel])
    ids = [plan.members[g][p] for g, p in zip(groups, pos)]
    return ids, groups, pos


class UniformSampler:
    """Baseline: every pool id equally likely."""

    def __init__(self, ids):
        self.ids = list(ids)
        if not self.ids:
            raise ValidationError("uniform sampler needs a non-empty pool")

    def draw(self, batch_size, rng):
        idx = rng.integers(len(self.ids), size=batch_size)
        return [self.ids[i] for i in idx]


def exposure_histogram(drawn_scores, pool_scores, n_bins=20):
    """Counts of drawn and pool OOD scores on shared bins spanning both."""
    drawn_scores = np.asarray(drawn_scores, dtype=np.float64)
    pool_scores = np.asarray(pool_scores, dtype=np.float64)
    if drawn_scores.size == 0:
        raise ValidationError("empty draw log")
    lo = min(drawn_scores.min(), pool_scores.min() if pool_scores.size else np.inf)
    hi = max(drawn_scores.max(), pool_scores.max() if pool_scores.size else -np.inf)
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    drawn, _ = np.histogram(drawn_scores, edges)
    pool, _ = np.histogram(pool_scores, edges) if pool_scores.size else (np.zeros(n_bins, int), None)
    return drawn, pool, edges


def write_draw_log(path, rows):
    """rows: iterable of (step, id, group, ood_score)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "id", "group", "ood_score"])
        for step, i, g, s in rows:
            w.writerow([int(step), i, int(g), repr(float(s))])
