"""Desk-scale experiment setups shared by the CLI and the acceptance tests."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluation import IDS, classify_errors, evaluate, pair_sequence
from .pipeline import run_pipeline
from .scenario import ClutterParams, CrossingParams, LaneParams, Scenario, synth_clutter, synth_crossing
from .tracker import PipelineConfig

# Shallow crossing: the two agents stay within the gate for several frames,
# which makes identity switches common under 0.3 m detection noise.
CROSSING_SUITE = CrossingParams(speed=0.5, half_angle=math.radians(10.0), frames=40,
                                sigma=0.3, center=(10.0, 5.0))
CROSSING_CONFIG = PipelineConfig(n_hypotheses=1, n_samples=10, matching_mode="center2d",
                                 gate_threshold=2.0, past_len=4, horizon=12)
HYPOTHESIS_LADDER = (1, 5, 10, 20)


def crossing_scenario(seed: int, sigma: float = 0.3) -> Scenario:
    return synth_crossing(replace(CROSSING_SUITE, sigma=sigma), seed)


@dataclass
class CrossingOutcome:
    """Per-seed results of STP, MTP at several H, sampled MTP and GT-past runs."""

    seed: int
    stp_ids: int
    shared_ids: int
    ids_minade: dict[str, list[float]] = field(default_factory=dict)

    def mean(self, method: str) -> float | None:
        v = self.ids_minade.get(method, [])
        return float(np.mean(v)) if v else None


def run_crossing_seed(seed: int, cfg: PipelineConfig = CROSSING_CONFIG,
                      ladder: Sequence[int] = HYPOTHESIS_LADDER, sigma: float = 0.3) -> CrossingOutcome:
    """Evaluate one crossing scenario; IDS subsets are defined by the STP run's events."""
    sc = crossing_scenario(seed, sigma)
    stp_cfg = replace(cfg, n_hypotheses=1)
    stp = run_pipeline(sc, stp_cfg, "stp")
    mode, gate = cfg.matching_mode, cfg.gate_threshold
    events = classify_errors(pair_sequence(stp.lineage_boxes(0), sc.gt, mode, gate), mode, gate)
    out = CrossingOutcome(seed, sum(e.kind == IDS for e in events), 0)

    def ids_values(preds, c):
        rep = evaluate(preds, sc.gt, events, c)
        return [i["minade"] for i in rep.instances if i["IDS"]]

    out.ids_minade["stp"] = ids_values(stp.predictions(), stp_cfg)
    out.ids_minade["gt"] = ids_values(run_pipeline(sc, stp_cfg, "gt").predictions(), stp_cfg)
    top = max(ladder)
    for h in ladder:
        hcfg = replace(cfg, n_hypotheses=h)
        res = run_pipeline(sc, hcfg, "mtp", sampling=(h == top))
        out.ids_minade[f"mtp{h}"] = ids_values(res.predictions(), hcfg)
        if h == top:
            out.ids_minade[f"mtp{h}_sampled"] = ids_values(res.predictions(sampled=True), hcfg)
            per_hyp = [classify_errors(pair_sequence(res.lineage_boxes(r), sc.gt, mode, gate), mode, gate)
                       for r in range(len(res.final_hypotheses))]
            shared = set.intersection(*[{e.key for e in ev if e.kind == IDS} for ev in per_hyp])
            out.shared_ids = len(shared)
    return out


def pooled_mean(outcomes: Sequence[CrossingOutcome], method: str) -> float | None:
    """Instance-weighted mean over all seeds."""
    values = [v for o in outcomes for v in o.ids_minade.get(method, [])]
    return float(np.mean(values)) if values else None


def bench_scenario(seed: int = 0, frames: int = 100, n_agents: int = 20) -> Scenario:
    """Dense two-way lane traffic with persistent clutter, so association is ambiguous."""
    lanes = LaneParams(n_agents=n_agents, frames=frames, speed=1.0, lane_spacing=2.5,
                       alternate=True, sigma=0.3, drop_prob=0.05)
    clutter = ClutterParams(rate=2.0, frames=frames, base=lanes,
                            extent=(-20.0, 20.0 + frames, -5.0, 2.5 * n_agents))
    return synth_clutter(clutter, seed)


@dataclass
class BenchRow:
    n_hypotheses: int
    tracking_ms: list[float]
    prediction_ms: list[float]
    pooling_ms: list[float]

    def to_dict(self) -> dict:
        def stats(v):
            return {"mean": statistics.fmean(v), "median": statistics.median(v)}
        return {"hypotheses": self.n_hypotheses, "tracking_ms": stats(self.tracking_ms),
                "prediction_ms": stats(self.prediction_ms), "pooling_ms": stats(self.pooling_ms)}


def benchmark(scenario: Scenario, cfg: PipelineConfig, hypotheses: Sequence[int],
              repeats: int = 3, workers: int | None = None) -> list[BenchRow]:
    """Per-frame timings (ms) per H; one untimed warm-up run precedes each H.

    Each repeat contributes its per-frame mean, so ``mean``/``median`` are
    taken across repeats.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not hypotheses or any(h < 1 for h in hypotheses):
        raise ValueError("hypotheses must be a non-empty list of values >= 1")
    rows = []
    for h in hypotheses:
        hcfg = replace(cfg, n_hypotheses=h)
        mode = "stp" if h == 1 else "mtp"
        run_pipeline(scenario, hcfg, mode, workers=workers)
        row = BenchRow(h, [], [], [])
        for _ in range(repeats):
            r = run_pipeline(scenario, hcfg, mode, workers=workers)
            row.tracking_ms.append(statistics.fmean(r.tracking_ms))
            row.prediction_ms.append(statistics.fmean(r.prediction_ms))
            row.pooling_ms.append(statistics.fmean(r.pooling_ms))
        rows.append(row)
    return rows

