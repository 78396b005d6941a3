import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_ranking, dense_ppr
from synth import stub_clients
from taskds.clients import ModelClient, StubModelClient, StubRule
from taskds.embed import EmbeddingVector, HashingEmbedder, build_index, cosine
from taskds.errors import ConfigError, EmptyIndex, ModelUnavailable
from taskds.extract import ExtractionRecord
from taskds.ingest import normalize_document
from taskds.kgraph import DatasetNode, Indices, KnowledgeGraph, ResolutionState, TaskNode, integrate_records, LinkingConfig
from taskds.query import (
    QueryConfig,
    RankedDataset,
    RankedResult,
    SearchEngine,
    SeedSet,
    TaskGraphMatrix,
    aggregate_datasets,
    expand_ppr,
    identify_seeds,
    rerank,
    result_to_dict,
    search,
)

EMB = HashingEmbedder()
EXACT = QueryConfig(ppr_tolerance=1e-13, ppr_max_iterations=5000)


def task_graph(n, edges):
    g = KnowledgeGraph()
    for i in range(n):
        g.tasks[f"t{i}"] = TaskNode(f"t{i}", f"task {i}", (), "doc")
    for (a, b), w in edges.items():
        g.add_task_edge(a, b, w)
    return g


def seeds(*ids):
    return SeedSet(tuple((t, 1.0) for t in ids))


# -- PPR ---------------------------------------------------------------------


def test_two_node_closed_form():
    g = task_graph(2, {("t0", "t1"): 1.0})
    p = expand_ppr(g, seeds("t0"))
    assert p["t0"] == pytest.approx(0.15 / (1 - 0.85**2), abs=1e-6)
    assert p["t0"] == pytest.approx(0.54054054, abs=1e-6)
    assert p["t1"] == pytest.approx(0.45945946, abs=1e-6)


def test_single_seed_without_edges():
    g = task_graph(4, {})
    p = expand_ppr(g, seeds("t2"))
    assert p["t2"] == 1.0 and p["t0"] == p["t1"] == p["t3"] == 0.0


def random_graph(rng, n, density):
    edges = {}
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < density:
                edges[(f"t{a}", f"t{b}")] = float(rng.uniform(0.01, 1.0))
    return edges


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 0.5), st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_ppr_matches_dense_oracle(n, density, seed, alpha):
    rng = np.random.default_rng(seed)
    edges = random_graph(rng, n, density)
    g = task_graph(n, edges)
    s = sorted({f"t{i}" for i in rng.integers(0, n, size=rng.integers(1, 4))})
    cfg = QueryConfig(alpha=alpha, ppr_tolerance=1e-13, ppr_max_iterations=5000)
    got = expand_ppr(g, seeds(*s), cfg)
    ref = dense_ppr(sorted(g.tasks), edges, s, alpha)
    assert max(abs(got[t] - ref[t]) for t in g.tasks) < 1e-8
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-6)
    assert min(got.values()) >= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_ppr_ranking_invariant_to_weight_scaling(n, seed, factor):
    rng = np.random.default_rng(seed)
    edges = random_graph(rng, n, 0.3)
    top = max(edges.values(), default=1.0)
    scaled_factor = min(factor, 1.0 / top)  # weights must stay within (0, 1]
    s = seeds("t0")
    a = expand_ppr(task_graph(n, edges), s, EXACT)
    b = expand_ppr(task_graph(n, {k: w * scaled_factor for k, w in edges.items()}), s, EXACT)
    assert np.allclose(a.array, b.array, atol=1e-9)


def test_default_iteration_cap_reports_non_convergence():
    # a long path converges slowly; the cap is reported, not hidden
    edges = {(f"t{i:02d}", f"t{i + 1:02d}"): 1.0 for i in range(40)}
    g = KnowledgeGraph()
    for i in range(41):
        g.tasks[f"t{i:02d}"] = TaskNode(f"t{i:02d}", "x", (), "d")
    g.task_task.update(edges)
    scores = expand_ppr(g, seeds("t00"), QueryConfig(ppr_max_iterations=5))
    assert not scores.converged and scores.iterations == 5
    assert sum(scores.array) == pytest.approx(1.0, abs=1e-9)


def test_masked_tasks_get_no_mass():
    g = task_graph(3, {("t0", "t1"): 1.0, ("t1", "t2"): 1.0})
    m = TaskGraphMatrix.from_graph(g)
    p = expand_ppr(m, seeds("t0"), EXACT, excluded=np.array([False, True, False]))
    assert p["t1"] == 0.0 and p["t2"] == 0.0 and p["t0"] == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        QueryConfig(alpha=1.0)
    with pytest.raises(ConfigError):
        QueryConfig(seed_k=0)
    with pytest.raises(ConfigError):
        QueryConfig(k_rerank=300, task_cutoff=200)


# -- aggregation ---------------------------------------------------------------


def tripartite(rng, n_tasks, n_datasets):
    g = task_graph(n_tasks, {})
    for d in range(n_datasets):
        cid = f"d{d:02d}"
        name = f"N{rng.integers(0, 4)}"
        g.datasets[cid] = DatasetNode(cid, name, {name}, "", set())
        g.dataset_docs[cid] = {"doc"}
        g.dataset_tasks[cid] = {f"t{i}" for i in rng.choice(n_tasks, size=rng.integers(0, 4), replace=True)}
    return g


def test_max_rule_examples():
    g = task_graph(2, {})
    g.datasets["d"] = DatasetNode("d", "D", {"D"}, "", set())
    g.dataset_docs["d"] = {"doc"}
    g.dataset_tasks["d"] = {"t0", "t1"}
    r = aggregate_datasets(g, {"t0": 0.2, "t1": 0.5})
    assert r.entries[0].score == 0.5
    g.dataset_tasks["d"] = {"t0"}
    assert aggregate_datasets(g, {"t0": 0.2, "t1": 0.5}).entries[0].score == 0.2


def test_planted_small_graph_matches_brute_force():
    g = task_graph(4, {})
    for cid, name, tasks in [("d1", "Alpha", {"t0", "t1"}), ("d2", "Beta", {"t2"}), ("d3", "Gamma", {"t1", "t3"})]:
        g.datasets[cid] = DatasetNode(cid, name, {name}, "", set())
        g.dataset_docs[cid] = {"doc"}
        g.dataset_tasks[cid] = tasks
    scores = {"t0": 0.1, "t1": 0.4, "t2": 0.4, "t3": 0.1}
    got = [(e.canonical_id, e.score) for e in aggregate_datasets(g, scores).entries]
    assert got == [("d1", 0.4), ("d2", 0.4), ("d3", 0.4)]
    assert got == brute_force_ranking(g.dataset_tasks, {c: n.canonical_name for c, n in g.datasets.items()}, scores)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 15), st.integers(0, 2**32 - 1), st.integers(1, 25))
def test_aggregation_matches_brute_force(n_tasks, n_datasets, seed, cutoff):
    rng = np.random.default_rng(seed)
    g = tripartite(rng, n_tasks, n_datasets)
    # coarse scores force ties
    scores = {t: float(rng.integers(0, 5)) / 10 for t in g.tasks}
    cfg = QueryConfig(task_cutoff=cutoff, k_rerank=1)
    got = aggregate_datasets(g, scores, cfg)
    names = {c: n.canonical_name for c, n in g.datasets.items()}
    assert [(e.canonical_id, e.score) for e in got.entries] == brute_force_ranking(g.dataset_tasks, names, scores, cutoff)
    for e in got.entries:
        assert e.score == max(s for _, s in e.supporting_tasks)
    assert all(a.score >= b.score for a, b in zip(got.entries, got.entries[1:]))


def test_aggregation_accepts_task_scores_object():
    g = tripartite(np.random.default_rng(0), 10, 6)
    g.task_task[("t0", "t1")] = 0.5
    ts = expand_ppr(g, seeds("t0"), EXACT)
    assert aggregate_datasets(g, ts) == aggregate_datasets(g, dict(ts))


# -- rerank ----------------------------------------------------------------


def ranked(n):
    g = KnowledgeGraph()
    entries = []
    for i in range(n):
        cid = f"d{i}"
        g.datasets[cid] = DatasetNode(cid, f"N{i}", {f"N{i}"}, f"desc {i}", set())
        entries.append(RankedDataset(cid, f"N{i}", 1.0 - i / 10, (), ()))
    return g, RankedResult(tuple(entries))


class Replying(ModelClient):
    identity = "replying"

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def _complete(self, prompt, contract):
        return self.fn(prompt)


def test_rerank_identity_reverse_and_invalid(caplog):
    g, r = ranked(5)
    assert rerank(r, "q", StubModelClient(), g, 3).entries == r.entries
    rev = Replying(lambda p: json.dumps(["d2", "d1", "d0"]))
    out = rerank(r, "q", rev, g, 3)
    assert [e.canonical_id for e in out.entries] == ["d2", "d1", "d0", "d3", "d4"]
    bad = Replying(lambda p: json.dumps(["d2", "d1", "d9"]))
    out = rerank(r, "q", bad, g, 3)
    assert out.entries == r.entries and out.rerank_status == "fallback:invalid"
    assert "not a permutation" in caplog.text
    dup = Replying(lambda p: json.dumps(["d1", "d1", "d0"]))
    assert rerank(r, "q", dup, g, 3).entries == r.entries


def test_rerank_unavailable_falls_back():
    class Down(ModelClient):
        identity = "down"

        def _complete(self, prompt, contract):
            raise ModelUnavailable("x")

    g, r = ranked(4)
    out = rerank(r, "q", Down(), g, 4)
    assert out.entries == r.entries and out.rerank_status == "fallback:unavailable"


# -- search --------------------------------------------------------------------


def engine_for(records, n_docs=None):
    docs = sorted({r.source_doc_id for r in records})
    g, s, idx = KnowledgeGraph(), ResolutionState(), Indices.empty(64)
    integrate_records(g, s, idx, [normalize_document(f"doc {d}".encode(), doc_id=d) for d in docs], records,
                      stub_clients(), LinkingConfig())
    return g, SearchEngine(g, idx.task, EMB)


def R(doc, name, task, kws=()):
    return ExtractionRecord(name, task, doc, tuple(kws))


def test_seed_for_exact_description_and_clamping():
    g, eng = engine_for([R("a", "COCO", "object detection in photographs")])
    s = identify_seeds("object detection in photographs", EMB, eng.task_index, 2)
    assert len(s.entries) == 1 and s.entries[0][1] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(EmptyIndex):
        identify_seeds("x", EMB, build_index("task", [], [], 64))


def test_seeds_match_brute_force():
    rng = np.random.default_rng(5)
    words = "alpha beta gamma delta epsilon zeta eta theta iota kappa".split()
    texts = [" ".join(rng.choice(words, 4)) + f" {i}" for i in range(50)]
    ids = [f"t{i:02d}" for i in range(50)]
    idx = build_index("task", ids, EMB.embed(texts), 64)
    q = "beta gamma kappa"
    qv = EMB.embed([q])[0]
    ref = sorted(ids, key=lambda t: (-round(cosine(qv, idx.vector(t)), 12), t))[:2]
    assert [t for t, _ in identify_seeds(q, EMB, idx, 2).entries] == ref


def test_planted_dataset_ranks_first():
    g, eng = engine_for([R("a", "COCO", "object detection in photographs"), R("b", "SQuAD", "reading comprehension"),
                         R("c", "LibriSpeech", "speech recognition")])
    assert eng.search("object detection in photographs").names()[0] == "COCO"


def test_expansion_reaches_dataset_through_task_edge():
    recs = [R("a", "COCO", "object detection in photographs", ["vision", "objects"]),
            R("b", "Objects365", "large vocabulary detection benchmark", ["vision", "objects"]),
            R("c", "SQuAD", "reading comprehension", ["text"])]
    g, eng = engine_for(recs)
    assert len(g.task_task) == 1  # only the keyword-linked pair
    res = eng.search("object detection in photographs", QueryConfig(seed_k=1))
    assert res.seeds.entries[0][0] in {t for t, d in [(t, g.tasks[t].description) for t in g.tasks] if d.startswith("object")}
    names = res.names()
    assert "Objects365" in names and "SQuAD" not in names


def test_rerank_identity_changes_nothing():
    g, eng = engine_for([R("a", "COCO", "object detection"), R("b", "VOC", "object detection")])
    off = eng.search("object detection")
    on = eng.search("object detection", QueryConfig(rerank_enabled=True), reranker=StubModelClient())
    assert on.entries == off.entries and on.rerank_status == "applied"


def test_search_determinism_and_concurrency():
    recs = [R(f"d{i}", f"Set{i % 4}", f"task about topic {i % 5} number {i}") for i in range(20)]
    g, eng = engine_for(recs)
    first = result_to_dict(eng.search("topic 3"), g)
    results = []
    threads = [threading.Thread(target=lambda: results.append(result_to_dict(search("topic 3", eng), g))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == first for r in results)


def test_empty_graph_gives_empty_result():
    eng = SearchEngine(KnowledgeGraph(), build_index("task", [], [], 64), EMB)
    assert eng.search("anything").entries == ()


def test_held_out_documents_are_masked():
    g, eng = engine_for([R("a", "COCO", "object detection"), R("b", "VOC", "object detection")])
    res = eng.search("object detection", excluded_docs={"a"})
    assert res.names() == ["VOC"]
    assert all("a" not in e.source_documents for e in res.entries)
    assert eng.search("object detection", excluded_docs={"a", "b"}).entries == ()


def test_result_serialization():
    g, eng = engine_for([R("a", "COCO", "object detection")])
    d = result_to_dict(eng.search("object detection"), g, top_n=5)
    assert d["results"][0]["canonical_name"] == "COCO"
    assert d["results"][0]["supporting_tasks"][0]["description"] == "object detection"
    assert d["results"][0]["source_documents"] == ["a"]
    json.dumps(d)
