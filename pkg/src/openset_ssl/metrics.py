"""AUROC, accuracy, vote entropy, group aggregation and cluster purity."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata, spearmanr

from .errors import ValidationError


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with mid-ranks; label 1 is the positive class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC needs both positive and negative samples")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValidationError("predictions and labels must have equal length")
    if predictions.size == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def vote_entropy(votes, weights=None, base=math.e) -> float:
    """Shannon entropy of the (optionally weighted) vote histogram."""
    votes = np.asarray(votes)
    if votes.size == 0:
        raise ValidationError("empty group")
    w = np.ones(votes.size) if weights is None else np.asarray(weights, dtype=np.float64)
    classes, inv = np.unique(votes, return_inverse=True)
    mass = np.bincount(inv, weights=w, minlength=classes.size)
    total = mass.sum()
    if total <= 0:
        raise ValidationError("weights must have positive total")
    f = mass[mass > 0] / total
    h = float(-np.sum(f * np.log(f)))
    h = max(h, 0.0)
    return h / math.log(base) if base != math.e else h


def aggregate_group(predictions, weights=None) -> int:
    """Plurality (or weighted plurality) label; ties go to the smallest class."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise ValidationError("empty group")
    w = np.ones(predictions.size) if weights is None else np.asarray(weights, dtype=np.float64)
    tally = np.bincount(predictions, weights=w)
    return int(np.argmax(tally))  # argmax returns the first maximum


def cluster_purity_report(table, ood_truth, splits=("unlabeled",)):
    """Per-cluster (CIS, inlier count, OOD count) and the CIS/OOD-fraction rank correlation.

    ``ood_truth`` is aligned with ``table.ids``; only rows in ``splits`` count.
    Clusters without hard-assigned rows are listed but left out of the
    correlation, which is None when fewer than two clusters remain or a
    side is constant.
    """
    if ood_truth is None:
        raise ValidationError("cluster purity needs ground-truth OOD flags")
    ood_truth = np.asarray(ood_truth, dtype=bool)
    if ood_truth.shape[0] != len(table):
        raise ValidationError("ood_truth must align with the score table")
    sel = table.mask(*splits)
    clusters = table.cluster[sel]
    flags = ood_truth[sel]
    K = table.cis.shape[0]
    inl = np.bincount(clusters[~flags], minlength=K)
    ood = np.bincount(clusters[flags], minlength=K)
    rows = [
        {"cluster": k, "cis": float(table.cis[k]), "inliers": int(inl[k]), "ood": int(ood[k])} for k in range(K)
    ]
    occupied = (inl + ood) > 0
    corr = None
    if occupied.sum() >= 2:
        frac = ood[occupied] / (inl[occupied] + ood[occupied])
        c = table.cis[occupied]
        if np.ptp(frac) > 0 and np.ptp(c) > 0:
            corr = float(spearmanr(c, frac).statistic)
    return {"clusters": rows, "rank_correlation": corr}


def group_aggregation(group_ids, predictions, labels, inlier_weights=None):
    """Per-group plurality and weighted votes with vote entropies.

    Returns a list of per-group dicts sorted by group id.
    """
    group_ids = np.asarray(group_ids, dtype=object)
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = []
    for g in sorted(set(group_ids.tolist())):
        sel = group_ids == g
        truth = aggregate_group(labels[sel])
        row = {
            "group_id": g,
            "n_items": int(sel.sum()),
            "true_label": truth,
            "pred_plurality": aggregate_group(predictions[sel]),
            "entropy_plurality": vote_entropy(predictions[sel]),
        }
        if inlier_weights is not None:
            w = np.asarray(inlier_weights, dtype=np.float64)[sel]
            if w.sum() > 0:
                row["pred_weighted"] = aggregate_group(predictions[sel], w)
                row["entropy_weighted"] = vote_entropy(predictions[sel], w)
            else:
                row["pred_weighted"] = row["pred_plurality"]
                row["entropy_weighted"] = row["entropy_plurality"]
        out.append(row)
    return out


def summarize_groups(rows):
    """Group-level accuracy and mean entropies over all groups and correct-only groups."""
    if not rows:
        return {}
    summary = {}
    for mode in ("plurality", "weighted"):
        key = f"pred_{mode}"
        if key not in rows[0]:
            continue
        correct = [r for r in rows if r[key] == r["true_label"]]
        ent = [r[f"entropy_{mode}"] for r in rows]
        summary[mode] = {
            "group_accuracy": len(correct) / len(rows),
            "mean_entropy_all": float(np.mean(ent)),
            "mean_entropy_correct": float(np.mean([r[f"entropy_{mode}"] for r in correct])) if correct else None,
        }
    return summary
