import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mutex_pairs_by_enumeration, ranks_by_path_enumeration, ranks_by_relaxation
from parcall.callseq import CallId, CallSequence, parse_call, parse_sequence
from parcall.corpus import generate_random_plan, load_case, synthetic_manifest
from parcall.manifest import Kind, ResourceProfile, ToolManifest, ToolSpec
from parcall.relation import (
    CapacityVector,
    CycleError,
    MutexModel,
    assign_ranks,
    build_data_edges,
    build_frg,
    build_mutex_pairs,
    mutex_general,
)


def ids(*ns):
    return [CallId(n) for n in ns]


def edge(a, b):
    return (CallId(a), CallId(b))


@pytest.fixture
def seo():
    case = load_case("fig2")
    return case.sequence(), case.manifest()


class TestDataEdges:
    def test_seo_plan(self, seo):
        seq, _ = seo
        assert build_data_edges(seq) == {edge(1, 3), edge(1, 4), edge(2, 5), edge(3, 5), edge(4, 5)}

    def test_no_refs(self):
        assert build_data_edges(parse_sequence('s1: a()\ns2: b("x")')) == set()

    def test_repeated_use_is_one_edge(self):
        seq = parse_sequence('s1: a()\ns2: b("{s1} {s1}", x=[s1, [s1]], y=s1 + s1)')
        assert build_data_edges(seq) == {edge(1, 2)}

    def test_nested_arrays_and_binaries(self):
        seq = parse_sequence("s1: a()\ns2: a()\ns3: b(x=[[s1]], y=2 * s2)")
        assert build_data_edges(seq) == {edge(1, 3), edge(2, 3)}


class TestRanks:
    def test_seo_plan(self, seo):
        seq, _ = seo
        ranks = assign_ranks(seq.ids, build_data_edges(seq))
        assert ranks == dict(zip(ids(1, 2, 3, 4, 5), [1, 1, 2, 2, 3]))

    def test_single_call(self):
        assert assign_ranks(ids(1), []) == {CallId(1): 1}

    def test_empty(self):
        assert assign_ranks([], []) == {}

    def test_diamond_with_long_chain(self):
        # a=1, b=2, c=3, d=4, x=5, y=6
        edges = [edge(1, 2), edge(1, 3), edge(2, 4), edge(3, 4), edge(1, 5), edge(5, 6), edge(6, 4)]
        ranks = assign_ranks(ids(1, 2, 3, 5, 6, 4), edges)
        assert ranks[CallId(4)] == 4
        assert ranks == ranks_by_path_enumeration(ids(1, 2, 3, 4, 5, 6), edges)

    def test_cycle(self):
        with pytest.raises(CycleError):
            assign_ranks(ids(1, 2, 3), [edge(1, 2), edge(2, 3), edge(3, 2)])

    def test_unknown_endpoint(self):
        with pytest.raises(KeyError):
            assign_ranks(ids(1), [edge(1, 9)])

    @pytest.mark.parametrize("seed", range(50))
    def test_random_plans_match_longest_path(self, seed):
        rng = random.Random(seed)
        seq = parse_sequence(generate_random_plan(seed, rng.randint(1, 50), rng.randint(1, 7)))
        edges = build_data_edges(seq)
        assert assign_ranks(seq.ids, edges) == ranks_by_relaxation(seq.ids, edges)

    @pytest.mark.parametrize("seed", range(30))
    def test_small_plans_match_path_enumeration(self, seed):
        seq = parse_sequence(generate_random_plan(seed, 1 + seed % 12, 4))
        edges = build_data_edges(seq)
        assert assign_ranks(seq.ids, edges) == ranks_by_path_enumeration(seq.ids, edges)

    @given(st.data())
    @settings(max_examples=150, deadline=None)
    def test_arbitrary_dags(self, data):
        n = data.draw(st.integers(1, 14))
        edges = set()
        for b in range(2, n + 1):
            for a in data.draw(st.sets(st.integers(1, b - 1), max_size=3)):
                edges.add(edge(a, b))
        order = data.draw(st.permutations(ids(*range(1, n + 1))))
        # Any presentation order of the calls gives the same ranks.
        assert assign_ranks(order, edges) == ranks_by_path_enumeration(ids(*range(1, n + 1)), edges)

    def test_generated_plans_respect_max_rank(self):
        seq = parse_sequence(generate_random_plan(3, 50, 6))
        ranks = assign_ranks(seq.ids, build_data_edges(seq))
        assert max(ranks.values()) <= 6


class TestMutexGeneral:
    def profile(self, cpu=0.0, mem=0.0, gpu=0.0, io=0.0):
        return ResourceProfile(cpu, mem, gpu, io)

    def test_full_cpu_each(self):
        assert mutex_general(self.profile(1), self.profile(1), CapacityVector(cpu=1))

    def test_all_zero(self):
        assert not mutex_general(self.profile(), self.profile(), CapacityVector())

    def test_strict_inequality(self):
        assert mutex_general(self.profile(0.6), self.profile(0.6), CapacityVector(cpu=1.0))
        assert not mutex_general(self.profile(0.5), self.profile(0.5), CapacityVector(cpu=1.0))

    def test_any_resource_suffices(self):
        assert mutex_general(self.profile(gpu=3), self.profile(gpu=3), CapacityVector(gpu_mem=5))
        assert mutex_general(self.profile(io=40), self.profile(io=30), CapacityVector())

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            CapacityVector(cpu=0)


class TestMutexPairs:
    def test_seo_plan(self, seo):
        seq, manifest = seo
        g = build_frg(seq, manifest)
        assert g.mutex_pairs == {frozenset(ids(3, 4))}

    def test_all_inout(self):
        g = load_case("movierec").graph()
        assert g.mutex_pairs == frozenset()

    def test_eight_detections(self):
        g = load_case("kitti").graph()
        kinds = {c: g[c].kind.value for c in g.ids}
        assert len(g.mutex_pairs) == 28
        assert set(g.mutex_pairs) == mutex_pairs_by_enumeration(kinds, g.rank)

    def test_analysis_pair(self):
        g = load_case("agnews").graph()
        assert g.mutex_pairs == {frozenset(ids(3, 4))}

    @pytest.mark.parametrize("seed", range(30))
    def test_random_plans_match_enumeration(self, seed):
        m = synthetic_manifest()
        g = build_frg(parse_sequence(generate_random_plan(seed, 5 + seed, 4, 0.6)), m)
        kinds = {c: g[c].kind.value for c in g.ids}
        assert set(g.mutex_pairs) == mutex_pairs_by_enumeration(kinds, g.rank)

    @pytest.mark.parametrize("seed", range(20))
    def test_pairs_are_same_rank_symmetric_irreflexive(self, seed):
        g = build_frg(parse_sequence(generate_random_plan(seed, 30, 5)), synthetic_manifest())
        for pair in g.mutex_pairs:
            a, b = sorted(pair, key=lambda c: c.index)
            assert a != b
            assert g.rank[a] == g.rank[b]
            assert b in g.partners(a) and a in g.partners(b)

    def test_general_model_uses_profiles(self):
        light = ToolSpec("light", Kind.COMPUTE, profile=ResourceProfile(0.4, 0.1, 0, 0))
        heavy = ToolSpec("heavy", Kind.COMPUTE, profile=ResourceProfile(0.7, 0.1, 0, 0))
        m = ToolManifest({"light": light, "heavy": heavy})
        seq = parse_sequence("s1: light()\ns2: light()\ns3: heavy()")
        g = build_frg(seq, m, CapacityVector(cpu=1.0), MutexModel.GENERAL)
        assert g.mutex_pairs == {frozenset(ids(1, 3)), frozenset(ids(2, 3))}
        simple = build_frg(seq, m)
        assert len(simple.mutex_pairs) == 3

    def test_general_model_still_needs_equal_rank(self):
        m = ToolManifest({"t": ToolSpec("t", Kind.COMPUTE)})
        g = build_frg(parse_sequence("s1: t()\ns2: t(s1)"), m, CapacityVector(), MutexModel.GENERAL)
        assert g.mutex_pairs == frozenset()

    def test_build_mutex_pairs_directly(self, seo):
        seq, manifest = seo
        g = build_frg(seq, manifest)
        assert build_mutex_pairs(g.nodes.values(), g.rank) == set(g.mutex_pairs)


class TestRelationGraph:
    def test_summary(self, seo):
        seq, manifest = seo
        s = build_frg(seq, manifest).summary()
        assert s == {"calls": 5, "data_edges": 5, "mutex_pairs": 1, "rank_histogram": {"1": 2, "2": 2, "3": 1}}

    def test_empty_graph(self):
        g = build_frg(CallSequence(()), ToolManifest())
        assert len(g) == 0 and g.summary()["calls"] == 0

    def test_self_defaults_to_blocking_inout(self):
        g = build_frg(parse_sequence('s1: self(q="x")'), ToolManifest())
        node = g[CallId(1)]
        assert node.kind is Kind.INOUT and node.mode.value == "block"

    def test_neighbours(self, seo):
        seq, manifest = seo
        g = build_frg(seq, manifest)
        assert set(g.preds(CallId(5))) == set(ids(2, 3, 4))
        assert set(g.succs(CallId(1))) == set(ids(3, 4))
        assert g.descendants({CallId(1)}) == set(ids(3, 4, 5))

    def test_to_dict_is_stable(self, seo):
        seq, manifest = seo
        d = build_frg(seq, manifest).to_dict()
        assert d["data_edges"] == [["s1", "s3"], ["s1", "s4"], ["s2", "s5"], ["s3", "s5"], ["s4", "s5"]]
        assert d["mutex_pairs"] == [["s3", "s4"]]

    def test_replace_node_keeps_structure(self, seo):
        seq, manifest = seo
        g = build_frg(seq, manifest)
        new = parse_call('s1: search(query="https://openai.com/", k=10)')
        g2 = g.replace_node(CallId(1), new)
        assert g2[CallId(1)].call == new
        assert g2.data_edges == g.data_edges and g2.rank == g.rank
        assert g[CallId(1)].call != new
