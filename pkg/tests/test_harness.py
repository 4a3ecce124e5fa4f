import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fixtures import write_episode
from rlattention import harness
from rlattention.errors import ContractError, DataError, IngestionError, ParameterError
from rlattention.harness import (
    EpisodeLog,
    FrameRow,
    ImageSet,
    MetricReport,
    average_seed_maps,
    build_failure_set,
    build_standard_set,
    ingest_dataset,
    ingest_unseen_set,
    normalize_scores,
    pairwise_consistency,
    run_comparison,
)
from rlattention.imaging import Rect, SaliencyMap, crop_region, normalize_map, write_raw_tensor


def episode(lives, name="ep"):
    rows = [FrameRow(k, 0, 0.0, lv, float(k)) for k, lv in enumerate(lives)]
    return EpisodeLog(name, rows)


def rewrite_row(path, lineno, **changes):
    lines = path.read_text().splitlines()
    row = json.loads(lines[lineno - 1])
    row.update(changes)
    lines[lineno - 1] = json.dumps(row)
    path.write_text("\n".join(lines) + "\n")


class TestIngest:
    def test_empty_directory(self, tmp_path):
        assert ingest_dataset(tmp_path) == []

    def test_one_episode(self, tmp_path):
        write_episode(tmp_path, "ep0", 10)
        eps = ingest_dataset(tmp_path)
        assert len(eps) == 1 and len(eps[0]) == 10
        ep = eps[0]
        assert ep.frame_ids == list(range(10)) and ep.game == "synthetic" and ep.gamma == 0.99
        assert ep.frame_size == (210, 160)

    def test_raw_tensor_archive(self, tmp_path):
        write_episode(tmp_path, "ep0", 6, archive="atnb")
        ep = ingest_dataset(tmp_path)[0]
        assert ep.raw(5).data.shape == (210, 160, 3)

    def test_lives_increase(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 5, lives=[3, 2, 2, 3, 3])
        with pytest.raises(IngestionError) as info:
            ingest_dataset(tmp_path)
        assert info.value.row == 4 and "log.jsonl:4" in str(info.value)
        assert d.exists()

    def test_non_monotone_frames(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 5)
        rewrite_row(d / "log.jsonl", 3, frame=1)
        with pytest.raises(IngestionError) as info:
            ingest_dataset(tmp_path)
        assert info.value.row == 3

    def test_malformed_row(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 5)
        with open(d / "log.jsonl", "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(IngestionError) as info:
            ingest_dataset(tmp_path)
        assert info.value.row == 6

    def test_missing_field(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 3)
        lines = (d / "log.jsonl").read_text().splitlines()
        row = json.loads(lines[1])
        del row["lives"]
        lines[1] = json.dumps(row)
        (d / "log.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(IngestionError, match="lives"):
            ingest_dataset(tmp_path)

    def test_missing_frame_file(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 5)
        (d / "frames" / "000003.png").unlink()
        with pytest.raises(IngestionError) as info:
            ingest_dataset(tmp_path)
        assert info.value.row == 4

    def test_out_of_frame_gaze_dropped(self, tmp_path):
        d = write_episode(tmp_path, "ep0", 4)
        rewrite_row(d / "log.jsonl", 2, gaze=[[10.0, 20.0], [-5.0, 3.0], [10.0, 500.0]])
        ep = ingest_dataset(tmp_path)[0]
        assert ep.dropped_gaze == 2 and ep.gaze(1).points == ((10.0, 20.0),)

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(IngestionError):
            ingest_dataset(tmp_path / "missing")

    def test_stack_padding_and_context(self, tmp_path):
        write_episode(tmp_path, "ep0", 6)
        ep = ingest_dataset(tmp_path)[0]
        assert ep.context_ids(0) == [0, 0, 0, 0]
        assert ep.context_ids(1) == [0, 0, 0, 1]
        assert ep.context_ids(5) == [2, 3, 4, 5]
        assert ep.stack(5).shape == (84, 84)


class TestStandardSet:
    def test_all_frames(self):
        s = build_standard_set(episode([3] * 100), 100)
        assert [m[1] for m in s.members] == list(range(100))

    def test_formula(self):
        s = build_standard_set(episode([3] * 1000), 100)
        assert [m[1] for m in s.members] == [10 * k + 3 for k in range(100)]

    def test_backfill_from_tail(self):
        # L=105, n=100: floor(k * 105 / 100) + 3 passes the end for the last two k
        idx = harness.standard_indices(105, 100)
        assert len(idx) == 100 and len(set(idx)) == 100 and min(idx) >= 3

    def test_too_short(self):
        with pytest.raises(ParameterError):
            build_standard_set(episode([3] * 50), 100)

    @given(length=st.integers(1, 400), n=st.integers(1, 150))
    def test_deterministic_and_valid(self, length, n):
        if length < n:
            return
        ep = episode([3] * length)
        a, b = build_standard_set(ep, n), build_standard_set(ep, n)
        assert a == b and len(a) == n
        assert len(set(a.members)) == n


class TestFailureSet:
    def test_definition(self):
        s = build_failure_set([episode([3, 3, 2])], 100)
        assert s.members == (("ep", 1),)

    def test_first_n_kept(self):
        eps = [episode(list(range(76, 0, -1)), "a"), episode(list(range(76, 0, -1)), "b")]
        total = sum(len(harness.life_loss_events(ep)) for ep in eps)
        assert total == 150
        s = build_failure_set(eps, 100)
        assert len(s) == 100
        assert s.members[:75] == tuple(("a", k) for k in range(75))
        assert s.members[75:] == tuple(("b", k) for k in range(25))

    def test_lookback_skip(self):
        s = build_failure_set([episode([3, 3, 3, 2, 2, 2, 2, 2, 2, 1])], 100, lookback=5)
        assert s.members == (("ep", 4),)

    def test_no_events(self, caplog):
        s = build_failure_set([episode([3] * 10)], 100)
        assert len(s) == 0 and "no life-loss" in caplog.text

    def test_event_count(self):
        lives = [5] * 40
        for pos in (4, 11, 25, 33):
            for k in range(pos, 40):
                lives[k] -= 1
        ep = episode(lives)
        assert harness.life_loss_events(ep) == [4, 11, 25, 33]
        assert len(build_failure_set([ep], 100)) == 4


class TestUnseenSet:
    def test_empty_archive(self, tmp_path):
        (tmp_path / "frames").mkdir()
        assert len(ingest_unseen_set(tmp_path)) == 0

    def test_hundred_members(self, tmp_path):
        write_raw_tensor(tmp_path / "frames.atnb", np.zeros((103, 210, 160), np.uint8))
        with open(tmp_path / "members.jsonl", "w") as fh:
            for fid in range(3, 103):
                fh.write(json.dumps({"frame": fid}) + "\n")
        s = ingest_unseen_set(tmp_path)
        assert s.kind == "unseen" and len(s) == 100 and not s.rejected

    def test_member_without_context(self, tmp_path):
        write_raw_tensor(tmp_path / "frames.atnb", np.zeros((10, 8, 8), np.uint8))
        with open(tmp_path / "members.jsonl", "w") as fh:
            for fid in (2, 5, 9, 12):
                fh.write(json.dumps({"frame": fid}) + "\n")
        s = ingest_unseen_set(tmp_path)
        assert [m[1] for m in s.members] == [5, 9]
        assert [m[1] for m in s.rejected] == [2, 12]


class TestImageSet:
    def test_unique(self):
        with pytest.raises(DataError):
            ImageSet("standard", (("a", 1), ("a", 1)))

    def test_target(self):
        with pytest.raises(DataError):
            ImageSet("standard", (("a", 1), ("a", 2)), target=1)

    def test_kind(self):
        with pytest.raises(ParameterError):
            ImageSet("random", ())

    def test_json_roundtrip(self, tmp_path):
        s = ImageSet("failure", (("a", 1), ("b", 7)), 5)
        s.save(tmp_path / "s.json")
        assert ImageSet.load(tmp_path / "s.json") == s


class TestSeedMaps:
    def test_identical(self):
        m = normalize_map(np.random.default_rng(0).uniform(size=(6, 6)))
        np.testing.assert_allclose(average_seed_maps([m] * 5).values, m.values, atol=1e-12)

    def test_two_point(self):
        a = SaliencyMap(np.array([[1.0, 0.0]]), True)
        b = SaliencyMap(np.array([[0.0, 1.0]]), True)
        np.testing.assert_allclose(average_seed_maps([a, b]).values, [[0.5, 0.5]])

    def test_random_sum(self):
        rng = np.random.default_rng(1)
        maps = [normalize_map(rng.uniform(size=(84, 84))) for _ in range(5)]
        assert abs(average_seed_maps(maps).values.sum() - 1.0) < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            average_seed_maps([normalize_map(np.ones((2, 2))), normalize_map(np.ones((2, 3)))])

    def test_requires_normalized(self):
        with pytest.raises(ContractError):
            average_seed_maps([SaliencyMap(np.ones((2, 2)))])

    @settings(max_examples=30, deadline=None)
    @given(
        raws=st.lists(arrays(np.float64, (10, 12), elements=st.floats(1e-3, 1.0)), min_size=1, max_size=5),
        top=st.integers(1, 8),
        left=st.integers(1, 10),
        inside=st.floats(0.05, 0.95),
    )
    def test_commutes_with_crop(self, raws, top, left, inside):
        # full-support maps that all place the same mass inside the crop
        rect = Rect(top, left, 10, 12)
        maps = []
        for r in raws:
            r = r.copy()
            mask = np.zeros(r.shape, bool)
            mask[top:, left:] = True
            r[mask] *= inside / r[mask].sum()
            r[~mask] *= (1 - inside) / r[~mask].sum()
            maps.append(normalize_map(r))
        a = crop_region(average_seed_maps(maps), rect)
        b = average_seed_maps([crop_region(m, rect) for m in maps])
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_crop_of_average_weights_by_mass(self):
        rng = np.random.default_rng(3)
        maps = [normalize_map(rng.uniform(size=(6, 6))) for _ in range(3)]
        rect = Rect(2, 1, 6, 6)
        direct = normalize_map(sum(m.values[2:, 1:] for m in maps))
        np.testing.assert_allclose(crop_region(average_seed_maps(maps), rect).values, direct.values, atol=1e-12)

    def test_pairwise_identical(self):
        m = normalize_map(np.random.default_rng(2).uniform(size=(8, 8)))
        mean, values = pairwise_consistency([m] * 5)
        assert len(values) == 10 and abs(mean - 1.0) < 1e-9

    def test_pairwise_anti(self):
        a = SaliencyMap(np.array([[0.8, 0.2]]), True)
        b = SaliencyMap(np.array([[0.2, 0.8]]), True)
        mean, values = pairwise_consistency([a, b])
        assert abs(mean + 1.0) < 1e-12 and len(values) == 1

    def test_pairwise_constant_excluded(self):
        m = normalize_map(np.arange(1.0, 5.0).reshape(2, 2))
        flat = normalize_map(np.ones((2, 2)))
        mean, values = pairwise_consistency([m, m, flat])
        assert sum(math.isnan(v) for v in values) == 2 and abs(mean - 1.0) < 1e-12

    def test_pairwise_needs_two(self):
        with pytest.raises(ParameterError):
            pairwise_consistency([normalize_map(np.ones((2, 2)))])


class TestScores:
    def test_by_final(self):
        np.testing.assert_allclose(normalize_scores([10, 20, 40]), [0.25, 0.5, 1.0])

    def test_by_reference(self):
        np.testing.assert_allclose(normalize_scores([46], "by_reference", 40), [1.15])

    def test_zero_final(self):
        out = normalize_scores([0, 0, 0])
        assert np.all(np.isnan(out))

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            normalize_scores([1], "by_max")


def maps_for(members, seed):
    rng = np.random.default_rng(seed)
    return {m: normalize_map(rng.uniform(size=(12, 12))) for m in members}


class TestComparison:
    members = tuple(("ep", k) for k in (9, 3, 5, 7))

    def test_self_comparison(self):
        s = ImageSet("standard", self.members, 4)
        maps = maps_for(self.members, 0)
        report = run_comparison(maps, maps, s)
        assert abs(report.mean("cc") - 1.0) < 1e-12 and report.mean("kl") <= 1e-6
        assert [r.frame_id for r in report.results] == [3, 5, 7, 9]

    def test_welch_against_itself(self):
        s = ImageSet("standard", self.members, 4)
        report = run_comparison(maps_for(self.members, 1), maps_for(self.members, 2), s)
        res = harness.compare_reports(report, report)
        assert res.p == 1.0 and "cc_vs_standard" in report.significance

    def test_skipped_counted(self):
        s = ImageSet("standard", self.members, 4)
        agent = maps_for(self.members[:3], 3)
        report = run_comparison(agent, maps_for(self.members, 4), s)
        assert report.skipped == 1 and len(report.results) == 3

    def test_flagged_excluded(self):
        s = ImageSet("standard", self.members, 4)
        agent = maps_for(self.members, 5)
        agent[("ep", 5)] = normalize_map(np.zeros((12, 12)))
        report = run_comparison(agent, maps_for(self.members, 6), s)
        agg = report.aggregates()
        flagged = sum(1 for r in report.results if r.flags)
        assert flagged == 1 and agg["cc"]["n"] == len(report.results) - flagged
        assert agg["kl"]["n"] == 3

    def test_auc_from_fixations(self):
        s = ImageSet("standard", self.members, 4)
        maps = maps_for(self.members, 7)
        fix = {m: np.array([[1, 1], [5, 6]]) for m in self.members}
        report = run_comparison(maps, maps, s, fixations=fix)
        assert all(0.0 <= r.auc <= 1.0 for r in report.results)
        assert report.aggregates()["auc"]["n"] == 4

    def test_csv_layout(self):
        s = ImageSet("standard", self.members, 4)
        report = run_comparison(maps_for(self.members, 8), maps_for(self.members, 9), s)
        rows = list(csv.reader(io.StringIO(report.csv_text())))
        assert rows[0] == ["frame_id", "cc", "kl", "auc", "flags", "episode", "neg_kl"]
        assert len(rows) == 5
        assert float(rows[1][6]) == -float(rows[1][2])

    def test_json_roundtrip(self, tmp_path):
        s = ImageSet("failure", self.members, 4)
        report = run_comparison(maps_for(self.members, 10), maps_for(self.members, 11), s, provenance={"seed": 3})
        harness.compare_reports(report, report)
        csv_path, json_path = report.save(tmp_path / "r")
        loaded = MetricReport.load(json_path)
        assert loaded.json_text() == report.json_text()
        assert loaded.provenance == {"image_set": "failure", "seed": 3}

    def test_correlate_with_scores(self):
        s = ImageSet("standard", self.members, 4)
        reports = [run_comparison(maps_for(self.members, k), maps_for(self.members, 100), s) for k in range(4)]
        res = harness.correlate_with_scores(reports, [1.0, 2.0, 3.0, 4.0])
        assert -1.0 <= res.r <= 1.0 and res.df == 2


class TestMapBundles:
    def test_roundtrip(self, tmp_path):
        members = [("a", 1), ("a", 2), ("b", 4)]
        maps = [normalize_map(np.random.default_rng(k).uniform(size=(5, 5))) for k in range(2)] + [None]
        harness.save_map_bundle(tmp_path / "m", members, maps, {"kind": "test"})
        loaded = harness.load_map_bundle(tmp_path / "m")
        assert set(loaded) == {("a", 1), ("a", 2)}
        np.testing.assert_array_equal(loaded[("a", 2)].values, maps[1].values)
        assert harness.bundle_meta(tmp_path / "m") == {"kind": "test"}

    def test_degenerate_flag_kept(self, tmp_path):
        harness.save_map_bundle(tmp_path / "m", [("a", 1)], [normalize_map(np.zeros((3, 3)))])
        assert harness.load_map_bundle(tmp_path / "m")[("a", 1)].degenerate


class TestSetMaps:
    def test_baselines_and_gaze(self, tmp_path):
        write_episode(tmp_path, "ep0", 8, gaze_every=2)
        catalog = harness.load_catalog(tmp_path)
        s = ImageSet("standard", (("ep0", 4), ("ep0", 5)), 2)
        gaze = harness.gaze_set_maps(catalog, s)
        assert gaze[0] is not None and gaze[1] is None
        flow = harness.baseline_set_maps("flow", catalog, s)
        itti = harness.baseline_set_maps("itti-koch", catalog, s)
        assert all(m.shape == (84, 84) and m.normalized for m in flow + itti)

    def test_unknown_source(self, tmp_path):
        write_episode(tmp_path, "ep0", 4)
        catalog = harness.load_catalog(tmp_path)
        s = ImageSet("standard", (("nope", 1),), 1)
        with pytest.raises(DataError):
            harness.gaze_set_maps(catalog, s)
        assert list(harness.set_stacks(catalog, s)) == [(("nope", 1), None)]
