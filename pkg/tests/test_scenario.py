from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtp.evaluation import FRAG_UNDER, IDS, SPURIOUS, classify_errors, pair_sequence
from mtp.experiments import CROSSING_SUITE
from mtp.geometry import Box3D
from mtp.pipeline import run_pipeline
from mtp.scenario import (ClutterParams, CrossingParams, Detection, GtTrajectory, LaneParams, Scenario,
                          ScenarioFormatError, dumps_scenario, load_scenario, loads_scenario, save_scenario,
                          synth_clutter, synth_crossing, synth_dropout)
from mtp.tracker import PipelineConfig

HEADER = '{"type":"header","schema":1,"name":"t","fps":10.0,"frames":2,"seed":null,"params":{}}'
DET = '{"type":"det","frame":0,"id":0,"label":"car","score":%s,"box":[0,0,0.75,4,1.8,1.5,0]}'


def stp_events(sc, cfg=None):
    cfg = cfg or PipelineConfig()
    run = run_pipeline(sc, cfg, "stp")
    return classify_errors(pair_sequence(run.lineage_boxes(0), sc.gt, cfg.matching_mode, cfg.gate_threshold))


class TestRoundTrip:
    def test_empty(self):
        sc = Scenario("empty", 10.0, 0, [], [])
        back = loads_scenario(dumps_scenario(sc))
        assert back.frames == 0 and back.detections == [] and back.gt == []

    def test_crossing_bytes_identical(self, tmp_path):
        sc = synth_crossing(CROSSING_SUITE, 3)
        path = tmp_path / "s.jsonl"
        save_scenario(sc, path)
        assert dumps_scenario(load_scenario(path)) == path.read_text()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1), st.integers(1, 3), st.floats(0, 3))
    def test_generated_round_trip(self, seed, drop, agents, rate):
        sc = synth_clutter(ClutterParams(rate=rate, frames=12,
                                         base=LaneParams(n_agents=agents, frames=12, drop_prob=drop, sigma=0.2)),
                           seed)
        text = dumps_scenario(sc)
        back = loads_scenario(text)
        assert dumps_scenario(back) == text
        assert [[d.box for d in f] for f in back.detections] == [[d.box for d in f] for f in sc.detections]

    def test_blank_lines_ignored(self):
        assert loads_scenario(HEADER + "\n\n" + DET % 1.0 + "\n").detections[0][0].score == 1.0


class TestValidation:
    def test_score_out_of_range_names_field_and_line(self):
        with pytest.raises(ScenarioFormatError, match=r"line 2: field 'score'"):
            loads_scenario(HEADER + "\n" + DET % 1.3)

    def test_unknown_schema(self):
        with pytest.raises(ScenarioFormatError, match="schema"):
            loads_scenario(HEADER.replace('"schema":1', '"schema":9'))

    def test_missing_header(self):
        with pytest.raises(ScenarioFormatError, match="header"):
            loads_scenario(DET % 0.5)

    def test_bad_json_line_number(self):
        with pytest.raises(ScenarioFormatError, match="line 3"):
            loads_scenario(HEADER + "\n" + DET % 0.5 + "\n{oops")

    def test_bad_box(self):
        rec = json.loads(DET % 0.5)
        rec["box"] = [0, 0, 0, -4, 1, 1, 0]
        with pytest.raises(ScenarioFormatError, match="box"):
            loads_scenario(HEADER + "\n" + json.dumps(rec))

    def test_frame_out_of_range(self):
        with pytest.raises(ScenarioFormatError, match="frame"):
            loads_scenario(HEADER + "\n" + (DET % 0.5).replace('"frame":0', '"frame":2'))

    def test_duplicate_gt_frame(self):
        row = '{"type":"gt","gt_id":0,"frame":1,"label":"car","box":[0,0,0.75,4,1.8,1.5,0]}'
        with pytest.raises(ScenarioFormatError, match="gt 0"):
            loads_scenario("\n".join([HEADER, row, row]))

    def test_wrong_type(self):
        with pytest.raises(ScenarioFormatError, match="'id'"):
            loads_scenario(HEADER + "\n" + (DET % 0.5).replace('"id":0', '"id":"a"'))

    def test_scenario_detection_count(self):
        with pytest.raises(ValueError):
            Scenario("x", 10.0, 2, [[]], [])

    def test_detection_score(self):
        with pytest.raises(ValueError):
            Detection(0, 0, Box3D(0, 0, 0, 1, 1, 1), "car", 1.3)

    def test_gt_frames_increasing(self):
        b = Box3D(0, 0, 0, 1, 1, 1)
        with pytest.raises(ValueError):
            GtTrajectory(0, (2, 1), (b, b))


class TestGenerators:
    def test_seed_determinism(self):
        p = replace(CROSSING_SUITE, sigma=0.5)
        assert dumps_scenario(synth_crossing(p, 11)) == dumps_scenario(synth_crossing(p, 11))
        assert dumps_scenario(synth_crossing(p, 11)) != dumps_scenario(synth_crossing(p, 12))

    @pytest.mark.parametrize("bad", [
        lambda: synth_crossing(CrossingParams(half_angle=0.0), 0),
        lambda: synth_crossing(CrossingParams(speed=0.0), 0),
        lambda: synth_crossing(CrossingParams(sigma=-1.0), 0),
        lambda: synth_dropout(LaneParams(frames=10, drop_windows=((0, 8, 12),)), 0),
        lambda: synth_dropout(LaneParams(drop_windows=((3, 1, 2),)), 0),
        lambda: synth_dropout(LaneParams(drop_prob=1.5), 0),
        lambda: synth_clutter(ClutterParams(rate=-1.0), 0),
        lambda: synth_clutter(ClutterParams(persistence=0), 0),
    ])
    def test_rejects_bad_parameters(self, bad):
        with pytest.raises(ValueError):
            bad()

    def test_crossing_meets_at_center(self):
        sc = synth_crossing(CrossingParams(speed=1.0, half_angle=math.pi / 4, frames=20), 0)
        a, b = (g.box_at(10) for g in sc.gt)
        assert (a.cx, a.cy) == pytest.approx((0.0, 0.0)) and (b.cx, b.cy) == pytest.approx((0.0, 0.0))
        a0, b0 = (g.box_at(0) for g in sc.gt)
        assert math.hypot(a0.cx - b0.cx, a0.cy - b0.cy) > 10.0

    def test_noise_free_detections_equal_gt(self):
        sc = synth_crossing(CrossingParams(), 0)
        for f, dets in enumerate(sc.detections):
            assert sorted((d.box.cx, d.box.cy) for d in dets) == sorted(
                (b.cx, b.cy) for b in sc.gt_boxes_at(f).values())

    def test_detection_noise_scale(self):
        sc = synth_crossing(CrossingParams(frames=2000, sigma=0.3), 5)
        gt = sc.gt_by_id()
        err = [d.box.cx - gt[0].box_at(f).cx for f, dets in enumerate(sc.detections) for d in dets
               if abs(d.box.cy - gt[0].box_at(f).cy) < abs(d.box.cy - gt[1].box_at(f).cy) and f < 500]
        assert np.std(err) == pytest.approx(0.3, rel=0.15)

    def test_full_window_removes_detections(self):
        sc = synth_dropout(LaneParams(n_agents=2, frames=10, drop_windows=((1, 0, 9),)), 0)
        assert all(len(d) == 1 for d in sc.detections)
        run = run_pipeline(sc, PipelineConfig(), "stp")
        anchors = [a for p in run.predictions().values() for a in p.anchors.values()]
        # agent 1 drives the y = +2 lane and is never seen
        assert anchors and all(abs(a.cy + 2.0) < 1.0 for a in anchors)

    def test_dropout_window_gives_fragments(self):
        sc = synth_dropout(LaneParams(n_agents=1, frames=20, drop_windows=((0, 5, 7),)), 0)
        # a track allowed to coast across the gap keeps its identity
        ev = stp_events(sc, PipelineConfig(max_age=3))
        assert [(e.kind, e.frame) for e in ev] == [(FRAG_UNDER, 5), (FRAG_UNDER, 6), (FRAG_UNDER, 7)]
        # a shorter coast budget drops the track; its successor reports after min_hits
        ev = stp_events(sc, PipelineConfig(max_age=2, min_hits=3))
        assert [(e.kind, e.frame) for e in ev] == [(FRAG_UNDER, f) for f in range(5, 10)] + [(IDS, 10)]

    def test_clutter_rate_zero_equals_base(self):
        base = CrossingParams()
        a = synth_clutter(ClutterParams(rate=0.0, base=base), 3)
        b = synth_crossing(base, 3)
        assert [[d.box for d in f] for f in a.detections] == [[d.box for d in f] for f in b.detections]

    def test_clutter_keeps_separation(self):
        sc = synth_clutter(ClutterParams(rate=3.0, frames=30, extent=(-20, 20, -20, 20),
                                         base=CrossingParams(frames=30)), 0)
        for f, dets in enumerate(sc.detections):
            gts = sc.gt_boxes_at(f).values()
            for d in dets[2:]:
                assert all(math.hypot(d.box.cx - g.cx, d.box.cy - g.cy) >= 5.0 for g in gts)

    def test_clutter_gives_spurious_events(self):
        sc = synth_clutter(ClutterParams(rate=2.0, frames=50, extent=(-30, 30, -30, 30),
                                         base=LaneParams(n_agents=2, frames=50)), 0)
        assert any(e.kind == SPURIOUS for e in stp_events(sc))

    def test_clutter_only_all_spurious(self):
        sc = synth_clutter(ClutterParams(rate=2.0, frames=30, extent=(-30, 30, -30, 30)), 1)
        ev = stp_events(sc)
        assert ev and all(e.kind == SPURIOUS for e in ev)


class TestCrossingDifficulty:
    def test_noise_free_crossing_tracked_cleanly(self):
        for half_angle in (math.pi / 4, math.radians(10)):
            sc = synth_crossing(replace(CROSSING_SUITE, half_angle=half_angle, sigma=0.0), 0)
            assert not [e for e in stp_events(sc) if e.kind == IDS]

    def test_noise_raises_switch_rate(self):
        def rate(sigma):
            hits = 0
            for seed in range(20):
                sc = synth_crossing(replace(CROSSING_SUITE, sigma=sigma), seed)
                hits += any(e.kind == IDS for e in stp_events(sc))
            return hits / 20

        assert rate(0.3) > rate(0.0)
