"""Trainer tests: init, stepping, retrieval, hierarchy, serialization."""

import math

import numpy as np
import pytest
from scipy import stats

from hypalign import autodiff as ad
from hypalign import trainer as tr
from hypalign.datasynth import Box, CaptionRecord, ConceptTree, default_synonyms
from hypalign.geometry import exp_map_origin


def tiny_config(**kw):
    # 16 scenes so the seed-stable hash yields a held-out scene (id 15)
    base = dict(objective="hyper", d=16, batch=6, steps=20, lr=0.01,
                scenes=16, categories=3, leaves_per_category=3,
                eval_every=10, seed=0)
    base.update(kw)
    return tr.ExperimentConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    cfg = tiny_config()
    tree, syn, records, gt = tr.default_corpus(cfg)
    return cfg, tree, syn, records


# --- config -------------------------------------------------------------------


def test_config_rejects_bad_fields_by_name():
    with pytest.raises(ValueError, match="objective"):
        tiny_config(objective="nonsense")
    with pytest.raises(ValueError, match="rho"):
        tiny_config(rho=1.0)
    with pytest.raises(ValueError, match=r"\bd\b"):
        tiny_config(d=12)
    with pytest.raises(ValueError, match="tau_init"):
        tiny_config(tau_init=0.0)
    with pytest.raises(ValueError, match="batch"):
        tiny_config(batch=0)


# --- init ----------------------------------------------------------------------


def test_init_deterministic(corpus):
    cfg, tree, syn, _ = corpus
    s1 = tr.init(cfg, tree, syn)
    s2 = tr.init(cfg, tree, syn)
    assert s1.params.keys() == s2.params.keys()
    for k in s1.params:
        a, b = s1.params[k], s2.params[k]
        assert np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b


def test_init_reparameterizations(corpus):
    cfg, tree, syn, _ = corpus
    state = tr.init(cfg, tree, syn)
    assert math.exp(state.params["curv_raw"]) == pytest.approx(cfg.c_init,
                                                               abs=1e-9)
    assert math.exp(state.params["log_tau"]) == pytest.approx(cfg.tau_init,
                                                              rel=1e-12)


def test_init_scale_statistics():
    # enough table entries for a tight empirical std estimate
    cfg = tiny_config(d=32, categories=25, leaves_per_category=8)
    state = tr.init(cfg)
    entries = np.concatenate([state.params["token_table"].ravel(),
                              state.params["object_table"].ravel()])
    assert entries.size >= 10_000
    assert abs(float(np.std(entries)) - tr.INIT_SCALE) <= 0.1 * tr.INIT_SCALE


# --- step ------------------------------------------------------------------------


def test_step_zero_lr_changes_only_moments(corpus):
    cfg, tree, syn, records = corpus
    cfg0 = tiny_config(lr=0.0)
    state = tr.init(cfg0, tree, syn)
    new_state, report = tr.step(state, records[:6])
    for k, v in state.params.items():
        nv = new_state.params[k]
        assert np.array_equal(v, nv) if isinstance(v, np.ndarray) else v == nv
    assert new_state.adam_t == 1
    moved = any(
        not np.array_equal(state.adam_m[k], new_state.adam_m[k])
        if isinstance(state.adam_m[k], np.ndarray)
        else state.adam_m[k] != new_state.adam_m[k]
        for k in state.adam_m)
    assert moved
    assert report.values()["total"] > 0.0


def test_single_step_descends_on_same_batch(corpus):
    cfg, tree, syn, records = corpus
    cfg1 = tiny_config(lr=1e-3, steps=1)
    state = tr.init(cfg1, tree, syn)
    batch = records[:6]
    before = tr.evaluate_batch(state, batch).values()["total"]
    state2, _ = tr.step(state, batch)
    after = tr.evaluate_batch(state2, batch).values()["total"]
    assert after < before


def test_step_deterministic(corpus):
    cfg, tree, syn, records = corpus
    batch = records[:6]
    s1, r1 = tr.step(tr.init(cfg, tree, syn), batch)
    s2, r2 = tr.step(tr.init(cfg, tree, syn), batch)
    assert r1.values() == r2.values()
    for k in s1.params:
        a, b = s1.params[k], s2.params[k]
        assert np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b


def test_step_keeps_curvature_positive_and_loss_consistent(corpus):
    cfg, tree, syn, records = corpus
    state = tr.init(cfg, tree, syn)
    for i in range(3):
        state, report = tr.step(state, records[i * 4:(i + 1) * 4])
        assert math.exp(state.params["curv_raw"]) > 0.0
        v = report.values()
        assert v["total"] == pytest.approx(
            v["bbox"] + v["cls"] + v["cap"] + v["entail"], abs=1e-12)


def test_step_rejects_empty_batch(corpus):
    cfg, tree, syn, _ = corpus
    with pytest.raises(ValueError, match="empty"):
        tr.step(tr.init(cfg, tree, syn), [])


def test_objective_variants_populate_expected_terms(corpus):
    cfg, tree, syn, records = corpus
    batch = records[:5]
    for objective, empty_terms in (("hyper", ()),
                                   ("baseline", ("entail",)),
                                   ("det-only", ("cap", "entail"))):
        state = tr.init(tiny_config(objective=objective), tree, syn)
        _, report = tr.step(state, batch)
        values = report.values()
        for term in ("bbox", "cls"):
            assert values[term] > 0.0
        for term in empty_terms:
            assert values[term] == 0.0


# --- train loop -------------------------------------------------------------------


def test_train_runs_and_metrics_are_monotone_in_step(corpus):
    cfg, tree, syn, records = corpus
    state, metrics = tr.train(cfg, records=records, tree=tree, synonyms=syn)
    assert metrics
    steps = [m.step for m in metrics]
    assert steps == sorted(steps)
    assert metrics[-1].step == cfg.steps
    assert all(m.noise_pct == metrics[0].noise_pct for m in metrics)
    for m in metrics:
        assert abs(m.total - (m.bbox + m.cls + m.cap + m.entail)) <= 1e-12


def test_train_bit_deterministic(corpus):
    cfg, tree, syn, records = corpus
    _, m1 = tr.train(cfg, records=records, tree=tree, synonyms=syn)
    _, m2 = tr.train(cfg, records=records, tree=tree, synonyms=syn)
    assert [m.to_json() for m in m1] == [m.to_json() for m in m2]


def test_split_is_seed_stable_and_scene_level(corpus):
    cfg, tree, syn, records = corpus
    train_recs, held_recs = tr.split_records(records)
    assert train_recs and held_recs
    train_scenes = {r.scene for r in train_recs}
    held_scenes = {r.scene for r in held_recs}
    assert not (train_scenes & held_scenes)
    again = tr.split_records(records)
    assert again[0] == train_recs and again[1] == held_recs


# --- retrieval ---------------------------------------------------------------------


def test_vectorized_distances_match_geometry_route():
    rng = np.random.default_rng(3)
    queries = rng.normal(scale=0.7, size=(5, 4))
    cands = rng.normal(scale=0.7, size=(6, 4))
    curvature = 1.3
    fast = tr._pairwise_lorentz(queries, cands, curvature)
    from hypalign.geometry import lorentz_distance
    for i in range(5):
        for j in range(6):
            want = ad.val(lorentz_distance(
                exp_map_origin(queries[i], curvature),
                exp_map_origin(cands[j], curvature)))
            assert fast[i, j] == pytest.approx(want, abs=1e-10)


def test_retrieval_single_pair_is_one(corpus):
    cfg, tree, syn, records = corpus
    state = tr.init(cfg, tree, syn)
    assert tr.evaluate_retrieval(state, records[:1]) == 1.0


def test_retrieval_rejects_empty(corpus):
    cfg, tree, syn, _ = corpus
    with pytest.raises(ValueError, match="pairs"):
        tr.evaluate_retrieval(tr.init(cfg, tree, syn), [])


def test_retrieval_untrained_is_chance_level():
    """Distinct-class candidates, shuffled labels: exact Bernoulli(1/n)."""
    cfg = tiny_config(categories=4, leaves_per_category=3, scenes=40)
    tree, syn, records, _ = tr.default_corpus(cfg)
    state = tr.init(cfg, tree, syn)
    leaves = tree.leaves()
    n = len(leaves)
    rng = np.random.default_rng(77)
    by_leaf = {}
    for rec in records:
        by_leaf.setdefault(min(rec.true_objects), []).append(rec)
    trials, hits = 0, 0
    for rep in range(60):
        # relabel with a random permutation: candidate classes stay
        # distinct and carry no signal about the captions, so hits are
        # Bernoulli(1/n)
        perm = rng.permutation(n)
        sample = []
        for pos, leaf in enumerate(leaves):
            pool = by_leaf[leaf]
            rec = pool[int(rng.integers(len(pool)))]
            fake = leaves[int(perm[pos])]
            sample.append(CaptionRecord(
                box=rec.box, tokens=rec.tokens, true_objects={fake},
                hallucinated=frozenset(), scene=rec.scene,
                gt_box=rec.gt_box))
        hits += int(round(tr.evaluate_retrieval(state, sample) * n))
        trials += n
    p = 1.0 / n
    sigma = math.sqrt(p * (1 - p) / trials)
    assert abs(hits / trials - p) <= 3 * sigma


# --- hierarchy report ----------------------------------------------------------------


def test_hierarchy_null_check_symmetric_construction(corpus):
    """With caption and object embeddings drawn from the same distribution
    the norms are statistically equal and containment is far from 1."""
    cfg, tree, syn, records = corpus
    state = tr.init(cfg, tree, syn)
    rng = np.random.default_rng(5)
    rows = rng.normal(scale=0.3, size=(400, cfg.d))
    caps = rows[:200]
    objs = rows[200:]
    curvature = 1.0
    cap_pts = [exp_map_origin(r, curvature) for r in caps]
    obj_pts = [exp_map_origin(r, curvature) for r in objs]
    cap_norms = [float(ad.val(p.space_norm)) for p in cap_pts]
    obj_norms = [float(ad.val(p.space_norm)) for p in obj_pts]
    _, pvalue = stats.ttest_ind(cap_norms, obj_norms)
    assert pvalue > 0.01
    from hypalign.geometry import cone_contains
    rate = np.mean([cone_contains(c, v)
                    for c, v in zip(cap_pts, obj_pts)])
    assert rate < 0.9


def test_hierarchy_report_fields(corpus):
    cfg, tree, syn, records = corpus
    state = tr.init(cfg, tree, syn)
    report = tr.hierarchy_report(state, records[:40])
    assert report.mean_caption_norm > 0.0
    assert report.mean_object_norm > 0.0
    assert 0.0 <= report.containment_rate <= 1.0


# --- serialization -------------------------------------------------------------------


def test_state_round_trips_through_json(tmp_path, corpus):
    cfg, tree, syn, records = corpus
    state, _ = tr.train(tiny_config(steps=5, eval_every=5),
                        records=records, tree=tree, synonyms=syn)
    path = tmp_path / "state.json"
    tr.save_state(path, state)
    again = tr.load_state(path)
    assert again.config == state.config
    assert again.tree == state.tree
    assert again.synonyms == state.synonyms
    assert again.adam_t == state.adam_t
    for k in state.params:
        a, b = state.params[k], again.params[k]
        assert np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
    # behavioural equality, not just structural
    r1 = tr.evaluate_retrieval(state, records[:30])
    r2 = tr.evaluate_retrieval(again, records[:30])
    assert r1 == r2


def test_export_embeddings_rows(corpus):
    cfg, tree, syn, records = corpus
    state = tr.init(cfg, tree, syn)
    rows = tr.export_embeddings(state, records[:10])
    kinds = {r["kind"] for r in rows}
    assert kinds == {"object", "caption"}
    objects = [r for r in rows if r["kind"] == "object"]
    assert len(objects) == len(tree.leaves())
    for row in rows:
        assert len(row["vector"]) == cfg.d
        assert row["lifted_norm"] >= 0.0


def test_metrics_record_json_round_trip():
    import json
    rec = tr.MetricsRecord(step=3, bbox=0.1, cls=0.2, cap=0.3, entail=0.0,
                           total=0.6, recall_at_1=0.5,
                           mean_caption_norm=0.4, mean_object_norm=1.2,
                           containment_rate=0.8, noise_pct=16.3)
    data = json.loads(rec.to_json())
    assert data["step"] == 3
    assert data["total"] == 0.6
    assert data["noise_pct"] == 16.3
