"""Cluster impurity and per-sample OOD scores from GMM memberships."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .gmm import GmmModel, e_step
from .store import EmbeddingStore

FIT_SPLITS = ("labeled", "unlabeled")
NORM_MODES = ("minmax", "rank")


def cluster_impurity(responsibilities, labeled_mask, delta=1e-6, return_mass=False):
    """CIS_j = -ln((L_j + delta) / (L_j + U_j + delta)).

    L_j and U_j are the summed memberships of labeled and unlabeled rows.
    """
    resp = np.asarray(responsibilities, dtype=np.float64)
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    if delta < 0:
        raise ValidationError("delta must be >= 0")
    L = resp[labeled_mask].sum(axis=0)
    U = resp[~labeled_mask].sum(axis=0)
    vacuous = (L + U) == 0.0
    if np.any(vacuous):
        warnings.warn(f"{int(vacuous.sum())} cluster(s) have zero total membership; CIS set to 0", stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        cis = -(np.log(L + delta) - np.log(L + U + delta))
    cis[vacuous] = 0.0
    cis = np.maximum(cis, 0.0)  # -0.0 and rounding noise
    if return_mass:
        return cis, L, U
    return cis


def ood_score(membership, cis):
    """Membership-weighted sum of cluster impurities; works row-wise on 2-D input."""
    membership = np.asarray(membership, dtype=np.float64)
    cis = np.asarray(cis, dtype=np.float64)
    if membership.shape[-1] != cis.shape[0]:
        raise ValidationError("membership and CIS lengths differ")
    out = membership @ cis
    return float(out) if out.ndim == 0 else out


def normalize_scores(scores, mode="minmax"):
    """Map pool scores into [0, 1]; a constant pool maps to 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValidationError("need at least one score")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full(s.shape, 0.5)
    if mode == "minmax":
        return (s - lo) / (hi - lo)
    if mode == "rank":
        return (rankdata(s) - 1.0) / (s.size - 1)
    raise ValidationError(f"unknown normalization mode {mode!r}")


@dataclass
class OodScoreTable:
    ids: list
    splits: list
    cluster: np.ndarray
    ood_score: np.ndarray
    ood_score_norm: np.ndarray
    cis: np.ndarray
    labeled_mass: np.ndarray
    unlabeled_mass: np.ndarray
    delta: float
    norm_mode: str = "minmax"

    def __len__(self):
        return len(self.ids)

    @property
    def cluster_mass(self):
        return self.labeled_mass + self.unlabeled_mass

    def mask(self, *splits):
        return np.isin(np.array(self.splits, dtype=object), splits)

    def lookup(self):
        return {i: k for k, i in enumerate(self.ids)}

    def save(self, csv_path, sidecar_path=None):
        csv_path = Path(csv_path)
        sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_name(csv_path.stem + "_cis.json")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "cluster", "ood_score", "ood_score_norm"])
            for i, c, s, sn in zip(self.ids, self.cluster, self.ood_score, self.ood_score_norm):
                w.writerow([i, int(c), repr(float(s)), repr(float(sn))])
        side = {
            "cis": self.cis.tolist(),
            "delta": self.delta,
            "norm_mode": self.norm_mode,
            "labeled_mass": self.labeled_mass.tolist(),
            "unlabeled_mass": self.unlabeled_mass.tolist(),
            "splits": list(self.splits),
        }
        sidecar_path.write_text(json.dumps(side, indent=1) + "\n", encoding="utf-8")
        return csv_path, sidecar_path

    @classmethod
    def load(cls, csv_path, sidecar_path=None):
        csv_path = Path(csv_path)
        sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_name(csv_path.stem + "_cis.json")
        side = json.loads(sidecar_path.read_text(encoding="utf-8"))
        ids, cl, s, sn = [], [], [], []
        with open(csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                ids.append(row["id"])
                cl.append(int(row["cluster"]))
                s.append(float(row["ood_score"]))
                sn.append(float(row["ood_score_norm"]))
        return cls(
            ids=ids,
            splits=list(side["splits"]),
            cluster=np.array(cl, dtype=np.int64),
            ood_score=np.array(s),
            ood_score_norm=np.array(sn),
            cis=np.array(side["cis"]),
            labeled_mass=np.array(side["labeled_mass"]),
            unlabeled_mass=np.array(side["unlabeled_mass"]),
            delta=float(side["delta"]),
            norm_mode=side["norm_mode"],
        )


def score_table(model: GmmModel, embeddings: EmbeddingStore, delta=1e-6, norm_mode="minmax") -> OodScoreTable:
    """Score every record of ``embeddings``.

    CIS uses the labeled and unlabeled records only; scores of other splits
    are normalized with the unlabeled pool's range and clipped to [0, 1].
    """
    if norm_mode not in NORM_MODES:
        raise ValidationError(f"unknown normalization mode {norm_mode!r}")
    resp = e_step(model, embeddings.vectors)
    fit = embeddings.split_mask(*FIT_SPLITS)
    labeled = embeddings.split_mask("labeled")
    cis, L, U = cluster_impurity(resp[fit], labeled[fit], delta, return_mass=True)
    scores = ood_score(resp, cis)
    pool = embeddings.split_mask("unlabeled")
    norm = np.full(len(embeddings), 0.5)
    if np.any(pool):
        pool_scores = scores[pool]
        norm[pool] = normalize_scores(pool_scores, norm_mode)
        lo, hi = pool_scores.min(), pool_scores.max()
        rest = ~pool
        if hi > lo:
            if norm_mode == "minmax":
                norm[rest] = np.clip((scores[rest] - lo) / (hi - lo), 0.0, 1.0)
            else:
                srt = np.sort(pool_scores)
                norm[rest] = np.searchsorted(srt, scores[rest], side="right") / pool_scores.size
    return OodScoreTable(
        ids=embeddings.ids,
        splits=list(embeddings.splits),
        cluster=np.argmax(resp, axis=1),
        ood_score=scores,
        ood_score_norm=norm,
        cis=cis,
        labeled_mass=L,
        unlabeled_mass=U,
        delta=float(delta),
        norm_mode=norm_mode,
    )
