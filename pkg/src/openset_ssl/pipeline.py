"""Stage orchestration, run manifests and sweeps.

Stages live in one working directory and pass artifacts by file name:

    gen-synth -> train-ssl -> fit-gmm -> score -> plan -> train-semisl -> eval

Each stage records the SHA-256 of its inputs and outputs plus a hash of the
config keys it reads; a rerun with identical hashes is skipped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .contrastive import SslConfig, config_dict, train_encoder
from .errors import DependencyError, ValidationError
from .gmm import GmmModel, fit_em
from .metrics import (
    accuracy,
    auroc,
    cluster_purity_report,
    group_aggregation,
    summarize_groups,
)
from .mixmatch import SAMPLER_MODES, MixMatchConfig, predict, train_semisl
from .nn import MLP
from .sampler import SamplerPlan, UniformSampler, build_plan, draw_batch, exposure_histogram, write_draw_log
from .scoring import OodScoreTable, score_table
from .store import FORMATS, EmbeddingStore, SyntheticSpec, generate_synthetic_openset, load_store, save_store

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    format: str = "jsonl"
    input_store: str = ""

    synth_n_labeled: int = 25
    synth_n_unlabeled_inlier: int = 2000
    synth_n_ood: int = 3000
    synth_n_val: int = 100
    synth_n_test: int = 400
    synth_C: int = 4
    synth_n_ood_components: int = 5
    synth_raw_dim: int = 32
    synth_class_separation: float = 6.0
    synth_ood_offset: float = 10.0
    synth_test_group_size: int = 20

    ssl_epsilon: float = 0.05
    ssl_tau: float = 0.5
    ssl_learning_rate: float = 3e-4
    ssl_batch_n: int = 32
    ssl_epochs: int = 10
    ssl_augment_sigma: float = 0.3
    ssl_hidden: list = field(default_factory=lambda: [64, 64])
    ssl_latent_dim: int = 16
    ssl_activation: str = "tanh"
    ssl_normalize_output: bool = True

    gmm_n_components: int = 12
    gmm_max_iter: int = 500
    gmm_tol: float = 1e-6
    gmm_n_restarts: int = 5
    gmm_cov_type: str = "diag"
    gmm_reg_covar: float = 1e-6

    score_delta: float = 1e-6
    score_norm_mode: str = "minmax"

    plan_tolerance: float = 1e-9
    plan_delta_w: float = 1e-3
    plan_exposure_draws: int = 100000
    plan_exposure_bins: int = 20

    mm_k_augment: int = 2
    mm_temperature: float = 0.5
    mm_mixup_alpha: float = 0.75
    mm_lambda_u: float = 75.0
    mm_rampup_steps: int = 500
    mm_batch_labeled: int = 32
    mm_batch_unlabeled: int = 32
    mm_learning_rate: float = 3e-4
    mm_epochs: int = 10
    mm_steps_per_epoch: int = 100
    mm_augment_sigma: float = 0.3
    mm_select_best_val: bool = True
    mm_ema_decay: float = 0.999
    mm_hidden: list = field(default_factory=lambda: [64])
    mm_activation: str = "tanh"
    modes: list = field(default_factory=lambda: ["ood_weighted", "uniform"])

    eval_entropy_base: str = "e"
    eval_ood_bins: int = 20

    sweep_seeds: list = field(default_factory=lambda: [0, 1, 2])
    sweep_contamination: list = field(default_factory=lambda: [0.8, 1.0, 1.5])
    sweep_n_labeled: list = field(default_factory=lambda: [25])
    sweep_n_components: list = field(default_factory=lambda: [4, 8, 12, 16])

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        clean = {}
        for k, v in d.items():
            default = getattr(cls(), k)
            clean[k] = _coerce(k, v, default)
        cfg = cls(**clean)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ValidationError("config must be a flat JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, **kw):
        cfg = replace(self, **{k: _coerce(k, v, getattr(self, k)) for k, v in kw.items()})
        cfg.validate()
        return cfg

    def validate(self):
        if self.format not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        for m in self.modes:
            if m not in SAMPLER_MODES:
                raise ValidationError(f"unknown mode {m!r}")
        if self.eval_entropy_base not in ("e", "2"):
            raise ValidationError("eval_entropy_base must be 'e' or '2'")
        self.synthetic_spec().validate()
        self.ssl_config().validate()
        MixMatchConfig(**self._mm_kwargs()).validate()
        if self.gmm_cov_type not in ("diag", "full"):
            raise ValidationError("gmm_cov_type must be 'diag' or 'full'")
        if self.score_norm_mode not in ("minmax", "rank"):
            raise ValidationError("score_norm_mode must be 'minmax' or 'rank'")

    def synthetic_spec(self):
        return SyntheticSpec(
            **{f.name: getattr(self, "synth_" + f.name) for f in fields(SyntheticSpec) if f.name != "seed"},
            seed=self.seed,
        )

    def ssl_config(self):
        kw = {f.name: getattr(self, "ssl_" + f.name) for f in fields(SslConfig) if f.name != "seed"}
        kw["hidden"] = tuple(kw["hidden"])
        return SslConfig(**kw, seed=self.seed)

    def _mm_kwargs(self):
        kw = {
            f.name: getattr(self, "mm_" + f.name)
            for f in fields(MixMatchConfig)
            if f.name not in ("seed", "sampler_mode")
        }
        kw["hidden"] = tuple(kw["hidden"])
        return kw

    def mixmatch_config(self, mode):
        return MixMatchConfig(**self._mm_kwargs(), seed=self.seed, sampler_mode=mode)


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ValidationError(f"{key}: expected a list, got {value!r}")
        return list(value)
    return value


def design_constants(cfg: PipelineConfig):
    return {
        "score_delta": cfg.score_delta,
        "plan_delta_w": cfg.plan_delta_w,
        "plan_tolerance": cfg.plan_tolerance,
        "mm_temperature": cfg.mm_temperature,
        "mm_mixup_alpha": cfg.mm_mixup_alpha,
        "mm_lambda_u": cfg.mm_lambda_u,
        "mm_ema_decay": cfg.mm_ema_decay,
        "gmm_cov_type": cfg.gmm_cov_type,
        "gmm_reg_covar": cfg.gmm_reg_covar,
        "score_norm_mode": cfg.score_norm_mode,
        "ssl_normalize_output": cfg.ssl_normalize_output,
        "adam_betas": [0.9, 0.999],
        "adam_eps": 1e-8,
        "mixup_lambda_rule": "max(lam, 1 - lam)",
        "unlabeled_loss": "squared L2 / C",
    }


# ----------------------------------------------------------------- utilities


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -------------------------------------------------------------------- stages


@dataclass(frozen=True)
class Stage:
    name: str
    prefixes: tuple  # config keys read by the stage
    inputs: callable
    outputs: callable
    run: callable


def _store_name(cfg):
    return f"store.{cfg.format}"


def _emb_name(cfg):
    return f"embeddings.{cfg.format}"


def _stage_gen_synth(cfg, wd):
    out = wd / _store_name(cfg)
    if cfg.input_store:
        store = load_store(cfg.input_store)
    else:
        store = generate_synthetic_openset(cfg.synthetic_spec())
    save_store(store, out, cfg.format)


def _stage_train_ssl(cfg, wd):
    store = load_store(wd / _store_name(cfg), cfg.format)
    res = train_encoder(store, cfg.ssl_config())
    _write_json(wd / "encoder.json", {"config": config_dict(cfg.ssl_config()), **res.encoder.to_dict()})
    save_store(res.embeddings, wd / _emb_name(cfg), cfg.format)
    _write_csv(wd / "ssl_losses.csv", ["epoch", "loss"], [[i, _num(l)] for i, l in enumerate(res.losses)])


def _stage_fit_gmm(cfg, wd):
    emb = load_store(wd / _emb_name(cfg), cfg.format)
    fit = emb.split_mask("labeled", "unlabeled")
    model = fit_em(
        emb.vectors[fit],
        cfg.gmm_n_components,
        max_iter=cfg.gmm_max_iter,
        tol=cfg.gmm_tol,
        n_restarts=cfg.gmm_n_restarts,
        seed=cfg.seed,
        cov_type=cfg.gmm_cov_type,
        reg_covar=cfg.gmm_reg_covar,
    )
    _write_json(wd / "gmm.json", model.to_dict())


def _stage_score(cfg, wd):
    emb = load_store(wd / _emb_name(cfg), cfg.format)
    model = GmmModel.from_dict(_read_json(wd / "gmm.json"))
    table = score_table(model, emb, cfg.score_delta, cfg.score_norm_mode)
    table.save(wd / "scores.csv", wd / "scores_cis.json")


def _stage_plan(cfg, wd):
    table = OodScoreTable.load(wd / "scores.csv", wd / "scores_cis.json")
    plan = build_plan(table, cfg.plan_tolerance, cfg.plan_delta_w, cfg.seed)
    plan.save(wd / "plan.json")
    rng = np.random.default_rng([cfg.seed, 7])
    n = cfg.plan_exposure_draws
    ids, groups, pos = draw_batch(plan, n, rng)
    drawn = np.array([plan.member_scores[g][p] for g, p in zip(groups, pos)]) if n else np.zeros(0)
    write_draw_log(wd / "draw_log.csv", ((k, i, g, s) for k, (i, g, s) in enumerate(zip(ids, groups, drawn))))
    pool = np.concatenate(plan.member_scores)
    if n:
        counts, pool_counts, edges = exposure_histogram(drawn, pool, cfg.plan_exposure_bins)
        _write_csv(
            wd / "exposure.csv",
            ["bin_lo", "bin_hi", "drawn", "pool"],
            [[_num(a), _num(b), int(c), int(p)] for a, b, c, p in zip(edges[:-1], edges[1:], counts, pool_counts)],
        )
    else:
        _write_csv(wd / "exposure.csv", ["bin_lo", "bin_hi", "drawn", "pool"], [])
    _write_json(
        wd / "exposure_summary.json",
        {
            "pool_mean_ood": plan.pool_mean_ood(),
            "expected_drawn_ood": plan.expected_ood(),
            "empirical_drawn_ood": float(drawn.mean()) if n else None,
            "n_draws": n,
        },
    )


def _stage_train_semisl(cfg, wd):
    store = load_store(wd / _store_name(cfg), cfg.format)
    table = OodScoreTable.load(wd / "scores.csv", wd / "scores_cis.json")
    plan = SamplerPlan.load(wd / "plan.json")
    scores = dict(zip(table.ids, table.ood_score.tolist()))
    labeled = store.subset("labeled")
    unlabeled = store.subset("unlabeled")
    val = store.subset("validation")
    C = store.n_classes
    for mode in cfg.modes:
        sampler = plan if mode == "ood_weighted" else UniformSampler(unlabeled.ids)
        res = train_semisl(labeled, unlabeled, sampler, cfg.mixmatch_config(mode), val, scores, n_classes=C)
        _write_json(wd / f"classifier_{mode}.json", {"config": cfg.mixmatch_config(mode).to_dict(), **res.classifier.to_dict()})
        _write_csv(
            wd / f"trace_{mode}.csv",
            ["step", "loss_l", "loss_u", "lambda_u", "acc_val", "mean_ood_drawn"],
            [[t.step, _num(t.loss_l), _num(t.loss_u), _num(t.lambda_u), _num(t.acc_val), _num(t.mean_ood_drawn)] for t in res.trace],
        )


def _stage_eval(cfg, wd):
    store = load_store(wd / _store_name(cfg), cfg.format)
    table = OodScoreTable.load(wd / "scores.csv", wd / "scores_cis.json")
    report = evaluate(cfg, store, table, {m: MLP.from_dict(_read_json(wd / f"classifier_{m}.json")) for m in cfg.modes})
    report["exposure"] = _read_json(wd / "exposure_summary.json")
    _write_json(wd / "report.json", report)
    _write_csv(
        wd / "accuracy.csv",
        ["mode", "accuracy_test", "accuracy_val"],
        [[m, _num(r["test"]), _num(r["validation"])] for m, r in report["accuracy"].items()],
    )
    _write_csv(wd / "auroc.csv", ["evaluation", "auroc"], [[k, _num(v)] for k, v in report["auroc"].items()])
    _write_csv(
        wd / "cluster_purity.csv",
        ["cluster", "cis", "inliers", "ood"],
        [[r["cluster"], _num(r["cis"]), r["inliers"], r["ood"]] for r in report["cluster_purity"]["clusters"]],
    )
    rows = []
    for m, summ in report["aggregation"].items():
        for voting, s in summ.items():
            rows.append([m, voting, _num(s["group_accuracy"]), _num(s["mean_entropy_all"]), _num(s["mean_entropy_correct"])])
    _write_csv(wd / "aggregation.csv", ["mode", "voting", "group_accuracy", "mean_entropy_all", "mean_entropy_correct"], rows)
    dist = report.pop("_ood_distribution")
    _write_csv(wd / "ood_distribution.csv", ["bin_lo", "bin_hi", "test_inlier", "pool_inlier", "pool_ood"], dist)
    _write_json(wd / "report.json", report)


def evaluate(cfg, store: EmbeddingStore, table: OodScoreTable, classifiers: dict):
    """Assemble the evaluation report for one run."""
    idx = store.index_of(table.ids)
    truth = store.ood_truth[idx]
    has_truth = any(r.ood_truth is not None for r in store)
    pool = table.mask("unlabeled")
    test = table.mask("test")
    aurocs = {}
    if has_truth and pool.any() and 0 < truth[pool].sum() < pool.sum():
        aurocs["pool"] = auroc(table.ood_score[pool], truth[pool])
    heldout = test | (pool & truth)
    if has_truth and test.any() and (pool & truth).any():
        aurocs["heldout_test_vs_ood"] = auroc(table.ood_score[heldout], truth[heldout])

    base = np.e if cfg.eval_entropy_base == "e" else 2.0
    test_store = store.subset("test")
    val_store = store.subset("validation")
    acc, agg, groups_out = {}, {}, {}
    score_by_id = dict(zip(table.ids, table.ood_score_norm.tolist()))
    for mode, clf in classifiers.items():
        pred_t = predict(clf, test_store.vectors)
        acc[mode] = {
            "test": accuracy(pred_t, test_store.labels) if len(test_store) else None,
            "validation": accuracy(predict(clf, val_store.vectors), val_store.labels) if len(val_store) else None,
        }
        gids = [r.group_id for r in test_store]
        if len(test_store) and all(g is not None for g in gids):
            w = 1.0 - np.array([score_by_id[r.id] for r in test_store])
            rows = group_aggregation(gids, pred_t, test_store.labels, inlier_weights=w)
            if base != np.e:
                for r in rows:
                    r["entropy_plurality"] /= np.log(base)
                    r["entropy_weighted"] /= np.log(base)
            agg[mode] = summarize_groups(rows)
            groups_out[mode] = rows

    purity = cluster_purity_report(table, truth) if has_truth and pool.any() else {"clusters": [], "rank_correlation": None}
    edges = np.linspace(float(table.ood_score.min()), float(table.ood_score.max()) + 1e-12, cfg.eval_ood_bins + 1)
    h_t = np.histogram(table.ood_score[test], edges)[0]
    h_pi = np.histogram(table.ood_score[pool & ~truth], edges)[0]
    h_po = np.histogram(table.ood_score[pool & truth], edges)[0]
    dist = [[_num(a), _num(b), int(x), int(y), int(z)] for a, b, x, y, z in zip(edges[:-1], edges[1:], h_t, h_pi, h_po)]
    return {
        "accuracy": acc,
        "auroc": aurocs,
        "cluster_purity": purity,
        "aggregation": agg,
        "groups": groups_out,
        "cis": table.cis.tolist(),
        "config": cfg.to_dict(),
        "_ood_distribution": dist,
    }


STAGES = {
    "gen-synth": Stage(
        "gen-synth",
        ("synth_", "seed", "format", "input_store"),
        lambda c: [],
        lambda c: [_store_name(c)],
        _stage_gen_synth,
    ),
    "train-ssl": Stage(
        "train-ssl",
        ("ssl_", "seed", "format"),
        lambda c: [_store_name(c)],
        lambda c: ["encoder.json", _emb_name(c), "ssl_losses.csv"],
        _stage_train_ssl,
    ),
    "fit-gmm": Stage(
        "fit-gmm",
        ("gmm_", "seed", "format"),
        lambda c: [_emb_name(c)],
        lambda c: ["gmm.json"],
        _stage_fit_gmm,
    ),
    "score": Stage(
        "score",
        ("score_", "format"),
        lambda c: [_emb_name(c), "gmm.json"],
        lambda c: ["scores.csv", "scores_cis.json"],
        _stage_score,
    ),
    "plan": Stage(
        "plan",
        ("plan_", "seed"),
        lambda c: ["scores.csv", "scores_cis.json"],
        lambda c: ["plan.json", "draw_log.csv", "exposure.csv", "exposure_summary.json"],
        _stage_plan,
    ),
    "train-semisl": Stage(
        "train-semisl",
        ("mm_", "modes", "seed", "format"),
        lambda c: [_store_name(c), "scores.csv", "scores_cis.json", "plan.json"],
        lambda c: [f for m in c.modes for f in (f"classifier_{m}.json", f"trace_{m}.csv")],
        _stage_train_semisl,
    ),
    "eval": Stage(
        "eval",
        ("eval_", "modes", "format"),
        lambda c: [_store_name(c), "scores.csv", "scores_cis.json", "exposure_summary.json"]
        + [f"classifier_{m}.json" for m in c.modes],
        lambda c: ["report.json", "accuracy.csv", "auroc.csv", "cluster_purity.csv", "aggregation.csv", "ood_distribution.csv"],
        _stage_eval,
    ),
}
STAGE_ORDER = list(STAGES)


def _producer(fname):
    for s in STAGES.values():
        for fmt in FORMATS:
            if fname in s.outputs(PipelineConfig(format=fmt)):
                return s.name
    for m in SAMPLER_MODES:
        if fname in STAGES["train-semisl"].outputs(PipelineConfig(modes=[m])):
            return "train-semisl"
    return None


def _stage_config_hash(cfg, stage):
    d = {k: v for k, v in cfg.to_dict().items() if any(k == p or (p.endswith("_") and k.startswith(p)) for p in stage.prefixes)}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest(), d


def load_manifest(wd):
    path = Path(wd) / "manifest.json"
    if path.exists():
        return _read_json(path)
    return None


def _fresh_manifest(cfg):
    return {
        "software_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg.to_dict(),
        "design_constants": design_constants(cfg),
        "seeds": {"master": cfg.seed, "synthetic": cfg.seed, "ssl": cfg.seed, "gmm": cfg.seed, "mixmatch": cfg.seed, "exposure_draws": [cfg.seed, 7]},
        "stages": {},
        "artifacts": {},
    }


def _as_config(cfg):
    if isinstance(cfg, PipelineConfig):
        return cfg
    if cfg is None:
        return PipelineConfig()
    return PipelineConfig.load(cfg)


def run_stage(name, cfg, workdir, force=False):
    """Run one stage in ``workdir``; returns ``(manifest fragment, skipped)``.

    ``cfg`` is a PipelineConfig or the path of a JSON config file.
    """
    cfg = _as_config(cfg)
    if name not in STAGES:
        raise ValidationError(f"unknown stage {name!r}; choose from {', '.join(STAGE_ORDER)}")
    stage = STAGES[name]
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for fname in stage.inputs(cfg):
        p = wd / fname
        if not p.exists():
            raise DependencyError(f"stage {name!r} needs {fname}; run {_producer(fname) or 'its producer'!r} first")
        inputs[fname] = sha256(p)
    chash, cdict = _stage_config_hash(cfg, stage)
    manifest = load_manifest(wd) or _fresh_manifest(cfg)
    prev = manifest["stages"].get(name)
    if not force and prev and prev["config_hash"] == chash and prev["inputs"] == inputs:
        outs = prev["outputs"]
        if all((wd / f).exists() and sha256(wd / f) == h for f, h in outs.items()):
            log.info("stage %s: inputs and outputs unchanged, skipping", name)
            return prev, True
    t0 = time.perf_counter()
    stage.run(cfg, wd)
    elapsed = time.perf_counter() - t0
    fragment = {
        "config_hash": chash,
        "config": cdict,
        "inputs": inputs,
        "outputs": {f: sha256(wd / f) for f in stage.outputs(cfg)},
        "seconds": round(elapsed, 3),
    }
    # downstream entries are stale once an upstream stage reruns
    for later in STAGE_ORDER[STAGE_ORDER.index(name) + 1 :]:
        manifest["stages"].pop(later, None)
    manifest["stages"][name] = fragment
    manifest["config"] = cfg.to_dict()
    manifest["design_constants"] = design_constants(cfg)
    manifest["kernel_backend"] = kernels.BACKEND
    # paths are relative to the manifest's directory
    manifest["artifacts"] = {f: f for s in manifest["stages"].values() for f in s["outputs"]}
    _write_json(wd / "manifest.json", manifest)
    return fragment, False


def run_pipeline(cfg, workdir, force=False):
    """Run every stage in order; returns the manifest."""
    cfg = _as_config(cfg)
    for name in STAGE_ORDER:
        _, skipped = run_stage(name, cfg, workdir, force=force)
        if skipped:
            print(f"[{name}] up to date, skipped")
        else:
            print(f"[{name}] done")
    return load_manifest(workdir)


# -------------------------------------------------------------------- sweeps


def _cell_config(cfg, **kw):
    return cfg.with_overrides(**kw)


def sweep_cells(cfg: PipelineConfig, axis: str):
    """Yield ``(cell_name, cell_params, config)`` for every grid cell and seed."""
    if axis == "contamination":
        for n_lab in cfg.sweep_n_labeled:
            for f in cfg.sweep_contamination:
                params = {"n_labeled": n_lab, "contamination": f}
                n_ood = int(round(f * cfg.synth_n_unlabeled_inlier))
                for seed in cfg.sweep_seeds:
                    c = _cell_config(cfg, synth_n_labeled=n_lab, synth_n_ood=n_ood, seed=seed)
                    yield f"L{n_lab}_c{f:g}_s{seed}", params, c
    elif axis == "n_components":
        for k in cfg.sweep_n_components:
            params = {"n_components": k}
            for seed in cfg.sweep_seeds:
                yield f"K{k}_s{seed}", params, _cell_config(cfg, gmm_n_components=k, seed=seed)
    else:
        raise ValidationError("sweep axis must be 'contamination' or 'n_components'")


def run_sweep(cfg, out, axis="contamination"):
    """Run every cell x seed in a private directory and aggregate mean/std.

    A failing cell is recorded and the sweep continues. Returns the summary
    rows written to ``sweep_<axis>.csv``.
    """
    cfg = _as_config(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    failures = []
    for name, params, c in sweep_cells(cfg, axis):
        wd = out / "cells" / name
        try:
            run_pipeline(c, wd)
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
            log.error("cell %s failed: %s", name, exc)
            failures.append({"cell": name, "error": f"{type(exc).__name__}: {exc}"})
            continue
        rep = _read_json(wd / "report.json")
        key = tuple(sorted(params.items()))
        for mode, a in rep["accuracy"].items():
            results.setdefault((key, mode), {"acc": [], "auroc": [], "seeds": []})
            results[(key, mode)]["acc"].append(a["test"])
            results[(key, mode)]["auroc"].append(rep["auroc"].get("heldout_test_vs_ood", float("nan")))
            results[(key, mode)]["seeds"].append(c.seed)
    param_names = sorted({k for (key, _) in results for k, _ in key})
    rows = []
    for (key, mode), r in results.items():
        acc = np.array(r["acc"], dtype=float)
        au = np.array(r["auroc"], dtype=float)
        rows.append(
            [*(dict(key)[p] for p in param_names), mode, len(acc), _num(acc.mean()), _num(acc.std()), _num(np.nanmean(au) if np.isfinite(au).any() else None)]
        )
    header = [*param_names, "mode", "n_seeds", "acc_mean", "acc_std", "auroc_mean"]
    _write_csv(out / f"sweep_{axis}.csv", header, rows)
    if axis == "contamination":
        _write_table1(out / "table_accuracy.csv", results)
    _write_json(
        out / f"sweep_{axis}_manifest.json",
        {"axis": axis, "config": cfg.to_dict(), "cells": sorted(p.name for p in (out / "cells").iterdir()) if (out / "cells").exists() else [], "failures": failures},
    )
    return [dict(zip(header, r)) for r in rows]


def _write_table1(path, results):
    """Rows = modes, columns = (n_labeled, contamination) cells, 'mean+-std' in percent."""
    cols = sorted({key for key, _ in results})
    modes = sorted({m for _, m in results})
    header = ["mode"] + [f"L={dict(k)['n_labeled']}|ood={dict(k)['contamination']:g}x" for k in cols]
    rows = []
    for m in modes:
        row = [m]
        for k in cols:
            r = results.get((k, m))
            if r is None:
                row.append("")
                continue
            a = 100 * np.array(r["acc"])
            row.append(f"{a.mean():.2f}+-{a.std():.2f}")
        rows.append(row)
    _write_csv(path, header, rows)
