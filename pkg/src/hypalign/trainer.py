"""Desk-scale training loop, retrieval evaluation, and hierarchy diagnostics.

The model is a pair of embedding tables plus the fusion stack: a region's
visual feature is its object's row of the object table, made language-aware
by attending over the caption's token embeddings and spatial-aware by the
positional encoder, then fused and fed to every active loss.  Captions are
the mean of their token embeddings (the learned stand-in for a text tower).
A small box head regresses the region box from the fused embedding.

Temperature and curvature are optimized in log space, so both stay strictly
positive through any run.  Everything is deterministic given the config and
seed: parameter init, batch order, and all metric computations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import val
from .datasynth import (Box, CaptionRecord, ConceptTree, SynonymMap,
                        caption_noise_metric, default_synonyms, synth_corpus)
from .fusion import (AttentionWeights, FusionMlp, RegionFeature,
                     cross_modal_attention, fuse, positional_encode)
from .geometry import exp_map_origin, exterior_angle, half_aperture
from .objectives import (LossReport, LossWeights, bbox_regression_loss,
                         classification_loss, entailment_loss,
                         euclidean_contrastive_loss,
                         hyperbolic_contrastive_loss, objective_baseline,
                         objective_det, objective_hyper)

OBJECTIVES = ("hyper", "baseline", "det-only")

HEAD_COUNT = 4
PROPOSAL_DIM = 4
INIT_SCALE = 0.02
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WARMUP_FRACTION = 0.1
BOX_HEAD_EPS = 1e-3

#: Radius of the smooth radial-tanh bound applied to embeddings before any
#: loss sees them.  The exponential lift amplifies norms as sinh(.), so an
#: unbounded pipeline lets the distance-based losses inflate scale instead
#: of learning structure; the squash is direction-preserving (cosines are
#: untouched) and near-identity for norms below half the radius.
EMBED_RADIUS = 3.0

# log-space projection bounds applied after each update; they keep the
# learned temperature and curvature in a numerically sane band (and C > 0)
LOG_TAU_BOUNDS = (math.log(0.05), math.log(10.0))
CURV_RAW_BOUNDS = (math.log(0.05), math.log(20.0))

_FULL_BOX = Box(0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; CLI flags mirror these field names."""

    objective: str = "hyper"
    d: int = 16
    batch: int = 16
    steps: int = 600
    lr: float = 0.03
    gamma: float = 0.1
    aperture_k: float = 0.1
    tau_init: float = 0.07
    c_init: float = 1.0
    rho: float = 0.0
    k: int = 3
    seed: int = 0
    scenes: int = 60
    categories: int = 10
    leaves_per_category: int = 5
    objects_per_scene: int = 3
    top_n: int = 4
    iou_threshold: float = 0.5
    eval_every: int = 50
    early_stop: bool = False
    weight_decay: float = 0.015
    w_bbox: float = 1.0
    w_cls: float = 1.0
    w_cap: float = 1.0
    w_entail: float = 1.0
    corpus_path: str = "corpus.jsonl"
    synonyms_path: str = "synonyms.json"
    meta_path: str = "corpus_meta.json"
    metrics_path: str = "metrics.jsonl"
    state_path: str = "state.json"
    export_path: str = "embeddings.jsonl"

    def __post_init__(self):
        checks = [
            ("objective", self.objective in OBJECTIVES),
            ("d", self.d >= 8 and self.d % 8 == 0),
            ("batch", self.batch >= 1),
            ("steps", self.steps >= 1),
            ("lr", self.lr >= 0.0 and math.isfinite(self.lr)),
            ("gamma", self.gamma >= 0.0),
            ("aperture_k", self.aperture_k > 0.0),
            ("tau_init", self.tau_init > 0.0),
            ("c_init", self.c_init > 0.0),
            ("rho", 0.0 <= self.rho < 1.0),
            ("k", self.k >= 1),
            ("scenes", self.scenes >= 1),
            ("categories", self.categories >= 1),
            ("leaves_per_category", self.leaves_per_category >= 1),
            ("objects_per_scene", self.objects_per_scene >= 1),
            ("top_n", self.top_n >= 1),
            ("iou_threshold", 0.0 < self.iou_threshold < 1.0),
            ("eval_every", self.eval_every >= 1),
            ("weight_decay", self.weight_decay >= 0.0),
            ("w_bbox", self.w_bbox >= 0.0),
            ("w_cls", self.w_cls >= 0.0),
            ("w_cap", self.w_cap >= 0.0),
            ("w_entail", self.w_entail >= 0.0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(
                    f"invalid config field {name}={getattr(self, name)!r}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(bbox=self.w_bbox, cls=self.w_cls, cap=self.w_cap,
                           entail=self.w_entail)


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluation snapshot of a training run."""

    step: int
    bbox: float
    cls: float
    cap: float
    entail: float
    total: float
    recall_at_1: float
    mean_caption_norm: float
    mean_object_norm: float
    containment_rate: float
    noise_pct: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True,
                          separators=(",", ":"))


@dataclass(frozen=True)
class HierarchyReport:
    mean_caption_norm: float
    mean_object_norm: float
    containment_rate: float


@dataclass
class ModelState:
    config: ExperimentConfig
    tree: ConceptTree
    synonyms: SynonymMap
    leaf_ids: list
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int = 0


def _param_specs(d: int, vocab: int) -> list:
    return [
        ("token_table", (vocab, d)),
        ("object_table", (vocab, d)),
        ("attn_wq", (d, d)),
        ("attn_wk", (d, d)),
        ("attn_wv", (d, d)),
        ("attn_wout", (d, d)),
        ("pe_proj", (PROPOSAL_DIM, d)),
        ("fuse_w1", (d, 2 * d)),
        ("fuse_b1", (2 * d,)),
        ("fuse_w2", (2 * d, d)),
        ("fuse_b2", (d,)),
        ("box_w", (d, 4)),
        ("box_b", (4,)),
    ]


def init(config: ExperimentConfig, tree: Optional[ConceptTree] = None,
         synonyms: Optional[SynonymMap] = None) -> ModelState:
    """Deterministically initialize a model for the given config.

    Tables and weight matrices are i.i.d. normal at scale 0.02, biases are
    zero; temperature and curvature start at their configured values via
    the log-space reparameterization.
    """
    if tree is None:
        tree = ConceptTree.balanced(config.categories,
                                    config.leaves_per_category)
    if synonyms is None:
        synonyms = default_synonyms(tree)
    vocab = max(max(tree.nodes()), synonyms.max_token_id()) + 1
    rng = np.random.default_rng(config.seed)
    biases = {"fuse_b1", "fuse_b2", "box_b"}
    params: dict = {}
    for name, shape in _param_specs(config.d, vocab):
        if name in biases:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, INIT_SCALE, size=shape)
    params["log_tau"] = math.log(config.tau_init)
    params["curv_raw"] = math.log(config.c_init)
    adam_m = {k: _zeros_like(v) for k, v in params.items()}
    adam_v = {k: _zeros_like(v) for k, v in params.items()}
    return ModelState(config=config, tree=tree, synonyms=synonyms,
                      leaf_ids=tree.leaves(), params=params,
                      adam_m=adam_m, adam_v=adam_v, adam_t=0)


def _zeros_like(v):
    return 0.0 if isinstance(v, float) else np.zeros(np.shape(v))


def _squash(x, radius: float = EMBED_RADIUS):
    """Direction-preserving norm bound: x * radius*tanh(|x|/radius)/|x|."""
    n = ad.clamp_min(ad.norm(x), 1e-12)
    factor = ad.div(ad.mul(ad.tanh(ad.div(n, radius)), radius), n)
    return ad.mul(factor, x)


class _Forward:
    """Shared forward passes over a parameter set (tape Vars or arrays)."""

    def __init__(self, params: dict):
        self.p = params
        self.attn = AttentionWeights(params["attn_wq"], params["attn_wk"],
                                     params["attn_wv"], params["attn_wout"],
                                     head_count=HEAD_COUNT)
        self.mlp = FusionMlp(params["fuse_w1"], params["fuse_b1"],
                             params["fuse_w2"], params["fuse_b2"])

    def caption(self, tokens: Sequence[int]):
        rows = [ad.take_row(self.p["token_table"], t) for t in tokens]
        total = rows[0]
        for r in rows[1:]:
            total = ad.add(total, r)
        return _squash(ad.div(total, float(len(rows))))

    def fused_visual(self, leaf: int, box: Box, tokens: Sequence[int]):
        v = ad.take_row(self.p["object_table"], leaf)
        text = ad.stack_rows([ad.take_row(self.p["token_table"], t)
                              for t in tokens])
        v_l = cross_modal_attention(v, text, self.attn)
        rf = RegionFeature(v=v, box=box, p=box.features())
        v_s = positional_encode(rf, self.p["pe_proj"])
        return _squash(fuse(v_l, v_s, self.mlp))

    def predicted_box(self, fused):
        """Sigmoid corner-size parameterization; always a valid box.

        The sigmoid is squashed into [eps, 1-eps] so a saturated head can
        never produce a zero-width or zero-height box.
        """
        raw = ad.add(ad.vecmat(fused, self.p["box_w"]), self.p["box_b"])
        u = ad.add(ad.mul(ad.sigmoid(raw), 1.0 - 2.0 * BOX_HEAD_EPS),
                   np.full(4, BOX_HEAD_EPS))
        u0, u1, u2, u3 = (ad.get(u, i) for i in range(4))
        x1 = ad.mul(u0, ad.sub(1.0, u2))
        y1 = ad.mul(u1, ad.sub(1.0, u3))
        return (x1, y1, ad.add(x1, u2), ad.add(y1, u3))

    def class_embedding(self, leaf: int):
        """Canonical class candidate: the class's own label token as text
        over the full-image box."""
        return self.fused_visual(leaf, _FULL_BOX, [leaf])


def _leaf_of(record: CaptionRecord) -> int:
    return min(record.true_objects)


def _batch_losses(fwd: _Forward, records: Sequence[CaptionRecord],
                  config: ExperimentConfig, leaf_pos: dict,
                  leaf_ids: Sequence[int]) -> LossReport:
    tau = ad.exp(fwd.p["log_tau"])
    curvature = ad.exp(fwd.p["curv_raw"])
    fused, captions, preds, gts, targets = [], [], [], [], []
    for rec in records:
        leaf = _leaf_of(rec)
        vt = fwd.fused_visual(leaf, rec.box, rec.tokens)
        fused.append(vt)
        captions.append(fwd.caption(rec.tokens))
        preds.append(fwd.predicted_box(vt))
        gts.append(rec.gt_box if rec.gt_box is not None else rec.box)
        targets.append(leaf_pos[leaf])
    label_rows = [ad.take_row(fwd.p["token_table"], leaf)
                  for leaf in leaf_ids]
    bbox = bbox_regression_loss(preds, gts)
    cls = classification_loss(fused, label_rows, targets, tau)
    weights = config.loss_weights()
    if config.objective == "hyper":
        cap = hyperbolic_contrastive_loss(fused, captions, curvature, tau)
        entail = entailment_loss(
            [exp_map_origin(c, curvature) for c in captions],
            [exp_map_origin(v, curvature) for v in fused],
            margin=config.gamma, aperture_k=config.aperture_k)
        return objective_hyper(bbox, cls, cap, entail, weights=weights)
    if config.objective == "baseline":
        cap = euclidean_contrastive_loss(fused, captions, tau)
        return objective_baseline(bbox, cls, cap, weights=weights)
    return objective_det(bbox, cls, weights=weights)


def evaluate_batch(state: ModelState, records: Sequence[CaptionRecord]
                   ) -> LossReport:
    """Loss report on a batch without updating anything."""
    leaf_pos = {leaf: i for i, leaf in enumerate(state.leaf_ids)}
    fwd = _Forward(state.params)
    return _batch_losses(fwd, records, state.config, leaf_pos,
                         state.leaf_ids)


def step(state: ModelState, records: Sequence[CaptionRecord]
         ) -> tuple:
    """One optimization step; returns the new state and the loss report.

    Forward through fusion, all active losses, reverse-mode backward, then
    an adaptive-moment update (beta1 0.9, beta2 0.999, eps 1e-8) with a
    linear warm-up over the first 10% of configured steps.  Aborts with a
    node diagnostic if any gradient is non-finite; asserts curvature stays
    positive.
    """
    if not records:
        raise ValueError("empty batch")
    config = state.config
    tape = ad.Tape()
    leaves = {name: tape.leaf(value, name=name)
              for name, value in state.params.items()}
    leaf_pos = {leaf: i for i, leaf in enumerate(state.leaf_ids)}
    fwd = _Forward(leaves)
    report = _batch_losses(fwd, records, config, leaf_pos, state.leaf_ids)
    grads = ad.backward(tape, report.total)

    t = state.adam_t + 1
    warmup = max(1, math.ceil(WARMUP_FRACTION * config.steps))
    lr_t = config.lr * min(1.0, t / warmup)
    # step decay by 0.1 at 1/3 and 2/3 of the configured budget
    progress = t / config.steps
    if progress > 2.0 / 3.0:
        lr_t *= 0.01
    elif progress > 1.0 / 3.0:
        lr_t *= 0.1
    b1c = 1.0 - ADAM_BETA1 ** t
    b2c = 1.0 - ADAM_BETA2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, value in state.params.items():
        g = grads[name]
        m = ADAM_BETA1 * state.adam_m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.adam_v[name] + (1.0 - ADAM_BETA2) * (g * g)
        update = lr_t * (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
        if name not in ("log_tau", "curv_raw"):
            # decoupled weight decay keeps embedding norms from running
            # away under the distance-based losses
            update = update + lr_t * config.weight_decay * value
        out = value - update
        if isinstance(value, float):
            out = float(out)
            if not math.isfinite(out):
                raise ArithmeticError(f"non-finite parameter {name!r}")
        elif not np.isfinite(out).all():
            raise ArithmeticError(f"non-finite entries in parameter {name!r}")
        new_params[name], new_m[name], new_v[name] = out, m, v
    new_params["log_tau"] = min(max(new_params["log_tau"],
                                    LOG_TAU_BOUNDS[0]), LOG_TAU_BOUNDS[1])
    new_params["curv_raw"] = min(max(new_params["curv_raw"],
                                     CURV_RAW_BOUNDS[0]), CURV_RAW_BOUNDS[1])
    assert math.exp(new_params["curv_raw"]) > 0.0
    new_state = ModelState(config=config, tree=state.tree,
                           synonyms=state.synonyms,
                           leaf_ids=state.leaf_ids, params=new_params,
                           adam_m=new_m, adam_v=new_v, adam_t=t)
    return new_state, report


def scene_held_out(scene: int) -> bool:
    """Seed-stable 10% held-out split by scene id."""
    digest = hashlib.sha256(str(int(scene)).encode("utf-8")).digest()
    return digest[0] % 10 == 0


def split_records(records: Sequence[CaptionRecord]) -> tuple:
    train = [r for r in records if not scene_held_out(r.scene)]
    held = [r for r in records if scene_held_out(r.scene)]
    return train, held


def _lifted_parts(rows: np.ndarray, curvature: float):
    """Vectorized exponential map: spatial matrix and time vector."""
    norms = np.linalg.norm(rows, axis=1)
    t = math.sqrt(curvature) * norms
    factor = np.where(np.abs(t) < 1e-4,
                      1.0 + t * t / 6.0, np.sinh(np.where(t == 0, 1.0, t))
                      / np.where(t == 0, 1.0, t))
    space = rows * factor[:, None]
    time = np.sqrt(1.0 / curvature + np.sum(space * space, axis=1))
    return space, time


def _pairwise_lorentz(queries: np.ndarray, cands: np.ndarray,
                      curvature: float) -> np.ndarray:
    qs, qt = _lifted_parts(queries, curvature)
    cs, ct = _lifted_parts(cands, curvature)
    inner = qs @ cs.T - np.outer(qt, ct)
    arg = np.maximum(-curvature * inner, 1.0)
    return np.arccosh(arg) / math.sqrt(curvature)


def evaluate_retrieval(state: ModelState,
                       records: Sequence[CaptionRecord]) -> float:
    """Recall@1 of caption -> object retrieval over the given pairs.

    Candidates are the records' own fused visual embeddings; a query
    caption scores a hit when its nearest candidate (Lorentzian distance
    between lifted embeddings for ``hyper``, cosine otherwise) carries the
    caption's object class.
    """
    records = list(records)
    if not records:
        raise ValueError("no evaluation pairs")
    fwd = _Forward(state.params)
    classes = np.array([_leaf_of(rec) for rec in records])
    cands = np.stack([
        np.asarray(val(fwd.fused_visual(_leaf_of(rec), rec.box, rec.tokens)))
        for rec in records])
    queries = np.stack([np.asarray(val(fwd.caption(rec.tokens)))
                        for rec in records])
    if state.config.objective == "hyper":
        curvature = math.exp(state.params["curv_raw"])
        scores = -_pairwise_lorentz(queries, cands, curvature)
    else:
        qn = np.linalg.norm(queries, axis=1)
        cn = np.linalg.norm(cands, axis=1)
        scores = (queries @ cands.T) / np.outer(qn, cn)
    best = np.argmax(scores, axis=1)
    return float(np.mean(classes[best] == classes))


def hierarchy_report(state: ModelState,
                     records: Sequence[CaptionRecord]) -> HierarchyReport:
    """Lifted-norm means per kind plus the cone-containment rate of
    matched (caption, fused visual) pairs."""
    records = list(records)
    if not records:
        raise ValueError("no records to diagnose")
    fwd = _Forward(state.params)
    curvature = math.exp(state.params["curv_raw"])
    cap_norms, obj_norms, contained = [], [], 0
    for rec in records:
        leaf = _leaf_of(rec)
        cap = exp_map_origin(np.asarray(val(fwd.caption(rec.tokens))),
                             curvature)
        vt = exp_map_origin(
            np.asarray(val(fwd.fused_visual(leaf, rec.box, rec.tokens))),
            curvature)
        cap_norms.append(float(val(cap.space_norm)))
        obj_norms.append(float(val(vt.space_norm)))
        angle = exterior_angle(cap, vt).value
        aperture = half_aperture(cap, state.config.aperture_k).value
        contained += int(angle <= aperture)
    return HierarchyReport(
        mean_caption_norm=float(np.mean(cap_norms)),
        mean_object_norm=float(np.mean(obj_norms)),
        containment_rate=contained / len(records),
    )


def default_corpus(config: ExperimentConfig):
    """Build the tree, synonyms, and corpus a config describes."""
    tree = ConceptTree.balanced(config.categories,
                                config.leaves_per_category)
    synonyms = default_synonyms(tree)
    records, scene_objects = synth_corpus(
        tree, scenes=config.scenes, noise_rate=config.rho, seed=config.seed,
        synonyms=synonyms, k=config.k,
        objects_per_scene=config.objects_per_scene, top_n=config.top_n,
        iou_threshold=config.iou_threshold)
    return tree, synonyms, records, scene_objects


def train(config: ExperimentConfig,
          records: Optional[Sequence[CaptionRecord]] = None,
          tree: Optional[ConceptTree] = None,
          synonyms: Optional[SynonymMap] = None):
    """Run the configured experiment; returns (state, metrics list).

    Metrics are appended once per ``eval_every`` steps (and at the end).
    With ``early_stop`` the loop ends as soon as held-out recall@1 is 1.0
    and, for the hyper objective, containment reaches 0.95.
    """
    if records is None:
        tree, synonyms, records, _ = default_corpus(config)
    if tree is None or synonyms is None:
        raise ValueError("tree and synonyms are required with records")
    noise_pct = caption_noise_metric(records, synonyms)
    train_recs, held_recs = split_records(records)
    if not train_recs or not held_recs:
        raise ValueError("both splits need records; add scenes")
    state = init(config, tree, synonyms)
    rng = np.random.default_rng([config.seed, 1])
    # batches are class-distinct where possible: at toy vocabulary size,
    # same-class rows would act as false negatives for the contrastive and
    # entailment terms and push matched pairs out of their own cones
    by_leaf: dict = {}
    for rec in train_recs:
        by_leaf.setdefault(_leaf_of(rec), []).append(rec)
    batch_leaves = sorted(by_leaf)
    metrics: list = []
    for t in range(config.steps):
        take = rng.choice(len(batch_leaves), size=config.batch,
                          replace=len(batch_leaves) < config.batch)
        batch = []
        for li in take:
            pool = by_leaf[batch_leaves[int(li)]]
            batch.append(pool[int(rng.integers(len(pool)))])
        state, report = step(state, batch)
        is_last = t + 1 == config.steps
        if (t + 1) % config.eval_every == 0 or is_last:
            recall = evaluate_retrieval(state, held_recs)
            hier = hierarchy_report(state, held_recs)
            values = report.values()
            metrics.append(MetricsRecord(
                step=t + 1, bbox=values["bbox"], cls=values["cls"],
                cap=values["cap"], entail=values["entail"],
                total=values["total"], recall_at_1=recall,
                mean_caption_norm=hier.mean_caption_norm,
                mean_object_norm=hier.mean_object_norm,
                containment_rate=hier.containment_rate,
                noise_pct=noise_pct))
            if config.early_stop and recall == 1.0:
                if (config.objective != "hyper"
                        or hier.containment_rate >= 0.95):
                    break
    return state, metrics


# ---------------------------------------------------------------------------
# state serialization


def state_to_json(state: ModelState) -> dict:
    params = {k: (v if isinstance(v, float) else v.tolist())
              for k, v in state.params.items()}
    return {
        "config": asdict(state.config),
        "tree": state.tree.to_json(),
        "synonyms": state.synonyms.to_json(),
        "params": params,
        "adam_m": {k: (v if isinstance(v, float) else v.tolist())
                   for k, v in state.adam_m.items()},
        "adam_v": {k: (v if isinstance(v, float) else v.tolist())
                   for k, v in state.adam_v.items()},
        "adam_t": state.adam_t,
    }


def _revive(name: str, data, d: int, vocab: int):
    if isinstance(data, float):
        return data
    return np.asarray(data, dtype=np.float64)


def state_from_json(data: dict) -> ModelState:
    config = ExperimentConfig(**data["config"])
    tree = ConceptTree.from_json(data["tree"])
    synonyms = SynonymMap.from_json(data["synonyms"])
    vocab = max(max(tree.nodes()), synonyms.max_token_id()) + 1
    params = {k: _revive(k, v, config.d, vocab)
              for k, v in data["params"].items()}
    return ModelState(
        config=config, tree=tree, synonyms=synonyms, leaf_ids=tree.leaves(),
        params=params,
        adam_m={k: _revive(k, v, config.d, vocab)
                for k, v in data["adam_m"].items()},
        adam_v={k: _revive(k, v, config.d, vocab)
                for k, v in data["adam_v"].items()},
        adam_t=int(data["adam_t"]),
    )


def save_state(path, state: ModelState) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_json(state), fh, sort_keys=True,
                  separators=(",", ":"))
        fh.write("\n")


def load_state(path) -> ModelState:
    with open(path, encoding="utf-8") as fh:
        return state_from_json(json.load(fh))


def export_embeddings(state: ModelState,
                      records: Sequence[CaptionRecord]) -> list:
    """Rows for external 2D projection: id, kind, pre-lift vector, norm."""
    fwd = _Forward(state.params)
    curvature = math.exp(state.params["curv_raw"])
    rows = []
    for leaf in state.leaf_ids:
        vec = np.asarray(val(fwd.class_embedding(leaf)))
        lifted = exp_map_origin(vec, curvature)
        rows.append({"id": int(leaf), "kind": "object",
                     "vector": vec.tolist(),
                     "lifted_norm": float(val(lifted.space_norm))})
    for i, rec in enumerate(records):
        vec = np.asarray(val(fwd.caption(rec.tokens)))
        lifted = exp_map_origin(vec, curvature)
        rows.append({"id": i, "kind": "caption", "vector": vec.tolist(),
                     "lifted_norm": float(val(lifted.space_norm))})
    return rows
