import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import tiny_config
from onlinenav.bench import (Benchmark, BenchmarkError, EpisodeResult, ExpertActor, PolicyActor,
                             RandomActor, SuiteReport, bucket_counts, compare, evaluate,
                             generate_benchmark, load_worlds, read_benchmark, read_report,
                             spl_term, summarize, write_benchmark, write_report)
from onlinenav.maps import empty_room
from onlinenav.planner import shortest_path
from onlinenav.trainer import make_estimator


@pytest.fixture(scope="module")
def worlds():
    return load_worlds(["maze:20", "maze:21"])


@pytest.fixture(scope="module")
def small_bench(worlds):
    return generate_benchmark(list(worlds.values()), 4, (0, 3), seed=7, cfg=tiny_config())


class TestSPL:
    def test_fixtures(self):
        assert spl_term(True, 10.0, 10.0) == 1.0
        assert spl_term(False, 10.0, 3.0) == 0.0
        assert spl_term(True, 10.0, 20.0) == 0.5

    def test_shorter_than_shortest_is_capped(self):
        assert spl_term(True, 10.0, 9.0) == 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            spl_term(True, 0.0, 1.0)

    @given(st.lists(st.tuples(st.booleans(), st.floats(0.1, 50), st.floats(0, 200)),
                    min_size=1, max_size=30))
    def test_spl_never_exceeds_sr(self, eps):
        results = [EpisodeResult(i, "s", ok, a, s, None if ok else "timeout", 1, 1)
                   for i, (ok, s, a) in enumerate(eps)]
        rep = summarize(results, Benchmark((_Spec("s"),), 0), "x")
        assert rep.mSPL <= rep.mSR + 1e-9
        assert 0.0 <= rep.mSPL and rep.mSR <= 100.0


class _Spec:
    def __init__(self, sid):
        self.scene_id = sid


class TestGeneration:
    @given(st.integers(0, 60), st.integers(0, 3), st.integers(0, 3))
    def test_bucket_counts(self, n, lo, span):
        counts = bucket_counts(n, lo, lo + span)
        assert sum(counts.values()) == n
        assert max(counts.values()) - min(counts.values()) <= 1
        keys = sorted(counts)
        assert [counts[k] for k in keys] == sorted(counts[k] for k in keys)

    def test_bucket_counts_fixture(self):
        assert bucket_counts(25, 0, 4) == {0: 5, 1: 5, 2: 5, 3: 5, 4: 5}
        assert bucket_counts(7, 0, 4) == {0: 1, 1: 1, 2: 1, 3: 2, 4: 2}

    def test_episodes_are_consistent(self, worlds, small_bench):
        assert len(small_bench) == 8
        assert small_bench.scene_ids == sorted(worlds)
        for e in small_bench.episodes:
            w = worlds[e.scene_id]
            p = shortest_path(w, e.start, e.goal, 0.25)
            # both searches are optimal on the grid; shortcutting can break ties differently
            assert abs(p.length - e.shortest_len) <= 0.01 * p.length + 2 * w.cell_size
            assert 0 <= e.keypoints <= 3

    def test_deterministic(self, worlds, small_bench):
        again = generate_benchmark(list(worlds.values()), 4, (0, 3), seed=7, cfg=tiny_config())
        assert repr(again.episodes) == repr(small_bench.episodes)
        other = generate_benchmark(list(worlds.values()), 4, (0, 3), seed=8, cfg=tiny_config())
        assert repr(other.episodes) != repr(small_bench.episodes)

    def test_round_trip(self, tmp_path, small_bench):
        write_benchmark(tmp_path / "b.jsonl", small_bench)
        back = read_benchmark(tmp_path / "b.jsonl")
        assert repr(back) == repr(small_bench)

    def test_unsatisfiable_buckets_fall_back(self, caplog):
        room = empty_room(8, 8)
        b = generate_benchmark([room], 5, (0, 4), seed=0, cfg=tiny_config(), max_tries=40)
        assert len(b) == 5
        assert "bucket" in caplog.text

    def test_bad_version(self, tmp_path, small_bench):
        write_benchmark(tmp_path / "b.jsonl", small_bench)
        text = (tmp_path / "b.jsonl").read_text().replace("onlinenav-bench-1", "other-2")
        (tmp_path / "b.jsonl").write_text(text)
        with pytest.raises(BenchmarkError):
            read_benchmark(tmp_path / "b.jsonl")


class TestEvaluate:
    def test_expert_ceiling(self, worlds, small_bench):
        rep = evaluate(ExpertActor(), small_bench, worlds, tiny_config())
        assert rep.mSR == 100.0 and rep.mSPL >= 95.0
        assert all(r.failure_kind is None for r in rep.results)

    def test_random_is_poor_and_spl_bounded(self, worlds, small_bench):
        rep = evaluate(RandomActor(6), small_bench, worlds, tiny_config())
        assert rep.mSR < 100.0
        for v in rep.scenes.values():
            assert v["SPL"] <= v["SR"]

    def test_batch_size_does_not_matter(self, worlds, small_bench):
        cfg = tiny_config()
        pol = make_estimator(cfg).initialize()
        a = evaluate(PolicyActor(pol), small_bench, worlds, cfg, batch=8)
        b = evaluate(PolicyActor(pol), small_bench, worlds, cfg, batch=3)
        assert a.results == b.results

    def test_training_scene_leak_rejected(self, worlds, small_bench):
        with pytest.raises(BenchmarkError, match="overlap"):
            evaluate(ExpertActor(), small_bench, worlds, tiny_config(), training_scenes=["maze:20"])

    def test_missing_scene(self, worlds, small_bench):
        with pytest.raises(BenchmarkError, match="maze-21"):
            evaluate(ExpertActor(), small_bench, {"maze-20": worlds["maze-20"]}, tiny_config())

    def test_report_round_trip(self, tmp_path, worlds, small_bench):
        rep = evaluate(RandomActor(6), small_bench, worlds, tiny_config(), name="rnd")
        write_report(tmp_path / "r.jsonl", rep)
        back = read_report(tmp_path / "r.jsonl")
        assert back.scenes == rep.scenes and back.results == rep.results
        assert (back.mSR, back.mSPL, back.name) == (rep.mSR, rep.mSPL, "rnd")


def _report(name, sr, spl, version="v"):
    rep = SuiteReport(name, version)
    rep.scenes = {"a": {"SR": sr[0], "SPL": spl[0], "n": 1}, "b": {"SR": sr[1], "SPL": spl[1], "n": 1}}
    rep.mSR, rep.mSPL = float(np.mean(sr)), float(np.mean(spl))
    return rep


class TestCompare:
    def test_table_shape_and_deltas(self):
        out = compare({"base": _report("base", (50, 30), (40, 20)),
                       "new": _report("new", (70, 30), (60, 10))})
        assert out["columns"] == ["a:SR", "a:SPL", "b:SR", "b:SPL", "mSR", "mSPL"]
        assert out["rows"]["new"] == [70, 60, 30, 10, 50.0, 35.0]
        assert out["deltas"]["new"] == [20, 20, 0, -10, 10.0, 5.0]
        assert out["best"]["mSR"] == "new" and out["best"]["b:SR"] == "base"
        assert len(out["text"].splitlines()) == 3

    def test_version_mismatch(self):
        with pytest.raises(BenchmarkError):
            compare({"x": _report("x", (1, 1), (1, 1)), "y": _report("y", (1, 1), (1, 1), "w")})

    def test_scene_mismatch(self):
        other = _report("y", (1, 1), (1, 1))
        other.scenes = {"a": other.scenes["a"]}
        with pytest.raises(BenchmarkError):
            compare({"x": _report("x", (1, 1), (1, 1)), "y": other})

    def test_empty(self):
        with pytest.raises(ValueError):
            compare({})
