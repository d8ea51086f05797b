import json

import pytest

from parcall.callseq import parse_sequence
from parcall.corpus import case_names, data_dir, generate_random_plan, load_all, load_case, synthetic_manifest
from parcall.manifest import Kind
from parcall.relation import build_frg

CASES = case_names()


def test_expected_cases_present():
    assert set(CASES) >= {"fig2", "hotpotqa", "movierec", "parallelqa", "parallelqa83",
                          "kitti", "agnews", "purchase_intent", "e2e_encryption"}
    assert [c.name for c in load_all()] == CASES


def test_unknown_case():
    with pytest.raises(KeyError):
        load_case("nope")


@pytest.mark.parametrize("name", CASES)
def test_summary_matches_the_graph(name):
    case = load_case(name)
    assert case.graph().summary() == case.summary


@pytest.mark.parametrize("name", CASES)
def test_config_points_at_the_case_files(name):
    case = load_case(name)
    assert case.config.plan_text() == case.plan_text
    assert case.config.processors == case.processors
    assert case.config.name == name


@pytest.mark.parametrize("name", CASES)
def test_makespans_cover_every_strategy(name):
    case = load_case(name)
    assert set(case.makespans) == {"SEQUENTIAL", "DIRECT_PARALLEL", "COORDINATED"}
    for row in case.makespans.values():
        assert min(row) == 1 and max(row) >= 4


@pytest.mark.parametrize("name", CASES)
def test_fixture_json_parses(name):
    folder = data_dir() / name
    for path in folder.iterdir():
        if path.suffix == ".json":
            json.loads(path.read_text(encoding="utf-8"))


def test_analysis_case_shape():
    g = load_case("agnews").graph()
    assert [g[c].call.function for c in g.ids] == ["self", "read", "tsne", "lda", "write"]
    assert g[g.ids[2]].kind is Kind.COMPUTE and g[g.ids[1]].kind is Kind.INOUT


def test_expected_makespan_lookup():
    case = load_case("kitti")
    assert case.expected_makespan("COORDINATED", 8) == 110
    with pytest.raises(KeyError):
        case.expected_makespan("COORDINATED", 99)


class TestGenerator:
    @pytest.mark.parametrize("seed", range(30))
    def test_compiles_with_bounded_rank(self, seed):
        n, r = 1 + seed * 3, 1 + seed % 6
        seq = parse_sequence(generate_random_plan(seed, n, r))
        g = build_frg(seq, synthetic_manifest())
        assert len(g) == n
        assert max(g.rank.values()) <= r

    def test_deterministic(self):
        assert generate_random_plan(7, 30) == generate_random_plan(7, 30)
        assert generate_random_plan(7, 30) != generate_random_plan(8, 30)

    def test_compute_fraction_extremes(self):
        m = synthetic_manifest()
        for frac, kind in ((1.0, Kind.COMPUTE), (0.0, Kind.INOUT)):
            g = build_frg(parse_sequence(generate_random_plan(1, 20, 3, frac)), m)
            assert {g[c].kind for c in g.ids[1:]} == {kind}

    @pytest.mark.parametrize("args", [(1, 0), (1, 5, 0)])
    def test_bad_arguments(self, args):
        with pytest.raises(ValueError):
            generate_random_plan(*args)

    def test_jittered_manifest(self):
        m = synthetic_manifest(jitter=True, io_capacity=4)
        assert m.io_capacity == 4
        assert m.tool("train").duration.low < m.tool("train").duration.high
