"""Segment-selection policies.

* ``greedy-original``: every candidate triggers a calibration on the selected
  set plus the candidate, and the information of all of them is re-evaluated
  at that estimate.
* ``greedy-init``: information of each candidate is evaluated once at the
  initial guess and accumulated; a single calibration runs at the end.
* ``m-largest``: the ``M`` segments with the largest individual information.
* ``baseline``: all segments.

Segment indices are 0-based. Counters are exact and drive the complexity
tests.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import information as info_mod
from .errors import ConfigError, ImuCalError, NumericalError
from .estimation import LMOptions, calibrate
from .initialization import initial_state

log = logging.getLogger(__name__)

POLICIES = ("baseline", "greedy-original", "greedy-init", "m-largest")


@dataclass
class SegmentDecision:
    segment: int
    info_scalar: float
    utility: float
    accepted: bool
    error: str | None = None


@dataclass
class SelectionReport:
    """Outcome of one selection policy followed by calibration."""

    policy: str
    selected: list
    n_segments: int
    K: int
    decisions: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    state: object = None
    calibration: object = None
    params: dict = field(default_factory=dict)
    dropped_steps: int = 0
    warnings: list = field(default_factory=list)

    @property
    def ratio(self):
        return len(self.selected) / self.n_segments if self.n_segments else 0.0

    def to_dict(self):
        def num(x):
            if x is None:
                return None
            x = float(x)
            return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")

        return {
            "policy": self.policy,
            "params": self.params,
            "K": self.K,
            "n_segments": self.n_segments,
            "dropped_steps": self.dropped_steps,
            "selected": list(self.selected),
            "selected_ratio": self.ratio,
            "counters": dict(self.counters),
            "timings_s": dict(self.timings),
            "decisions": [
                {"segment": d.segment, "info_scalar": num(d.info_scalar), "utility": num(d.utility),
                 "accepted": d.accepted, "error": d.error}
                for d in self.decisions
            ],
            "estimate": self.state.to_dict() if self.state is not None else None,
            "calibration": self.calibration.to_dict() if self.calibration is not None else None,
            "warnings": list(self.warnings),
        }

    def save_json(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    def save_trace_csv(self, path):
        """Per-segment trace with columns ``segment,info_scalar,utility,accepted``."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment", "info_scalar", "utility", "accepted"])
            for d in self.decisions:
                w.writerow([d.segment, repr(float(d.info_scalar)), repr(float(d.utility)), int(d.accepted)])


def _setup(data, K, theta0):
    segments = data.segments(K)
    if not segments:
        raise ConfigError(f"dataset has {data.n_steps} timesteps, fewer than one segment of {K}")
    if theta0 is None:
        theta0 = initial_state(data)
    theta0 = theta0.extrinsics_only()
    return segments, theta0


def _counters():
    return {"segment_jacobian_evals": 0, "calibrate_calls": 0, "calibrate_residual_block_evals": 0}


def _scalar(H):
    return info_mod.information_scalar(H)


def _logdet_sigma(H):
    """``log|Σ_Θ|`` of accumulated information (jittered, not strict)."""
    logdet_h, _ = info_mod.log_det_information(H)
    return -logdet_h


def _finish(report, segments, theta0, noise, options, counters, timings):
    chosen = [segments[i] for i in report.selected]
    t = time.perf_counter()
    state, cal = calibrate(chosen, theta0, noise, options)
    timings["calibrate"] += time.perf_counter() - t
    counters["calibrate_calls"] += 1
    counters["calibrate_residual_block_evals"] += cal.residual_block_evals
    report.state, report.calibration = state, cal


def select_greedy_init_param(data, noise, lam=0.5, K=100, theta0=None, options=None):
    """Greedy selection with every Jacobian evaluated at ``theta0``.

    Each candidate's Θ-marginal information is computed once and added to a
    running sum; a candidate is kept when the log-determinant gain exceeds
    ``lam``. The first segment is always kept.
    """
    if not lam >= 0:
        raise ConfigError("lambda must be nonnegative")
    segments, theta0 = _setup(data, K, theta0)
    counters, timings = _counters(), {"evaluate": 0.0, "calibrate": 0.0}
    report = SelectionReport("greedy-init", [], len(segments), K, params={"lambda": lam},
                             dropped_steps=data.dropped_steps(K), warnings=list(theta0.warnings))
    acc = info_mod.MarginalInfo.empty(theta0.theta_dim, point="theta0")
    logdet_prior = np.inf
    t = time.perf_counter()
    for seg in segments:
        counters["segment_jacobian_evals"] += 1
        try:
            H_new = info_mod.segment_marginal(seg, theta0, noise)
        except ImuCalError as exc:
            report.decisions.append(SegmentDecision(seg.index, -np.inf, np.nan, False, str(exc)))
            log.warning("segment %d rejected: %s", seg.index, exc)
            continue
        scal = _scalar(H_new)
        try:
            logdet_post = _logdet_sigma(acc.H + H_new)
            u = info_mod.utility(logdet_prior, logdet_post)
        except ImuCalError as exc:
            report.decisions.append(SegmentDecision(seg.index, scal, np.nan, False, str(exc)))
            continue
        accept = not report.selected or u > lam
        if accept:
            acc.add(seg.index, H_new)
            logdet_prior = logdet_post
            report.selected.append(seg.index)
        report.decisions.append(SegmentDecision(seg.index, scal, u, accept))
    timings["evaluate"] = time.perf_counter() - t
    _finish(report, segments, theta0, noise, options, counters, timings)
    report.counters, report.timings = counters, timings
    return report


def select_greedy_original(data, noise, lam=0.5, K=100, theta0=None, options=None):
    """Greedy selection with recalibration for every candidate.

    For each candidate the selected set plus the candidate is calibrated
    starting from the current estimate, and the information of the whole
    candidate set is re-evaluated at the new estimate. The estimate advances
    only when the candidate is kept. A failed calibration rejects the
    candidate.
    """
    if not lam >= 0:
        raise ConfigError("lambda must be nonnegative")
    segments, theta0 = _setup(data, K, theta0)
    counters, timings = _counters(), {"evaluate": 0.0, "calibrate": 0.0}
    report = SelectionReport("greedy-original", [], len(segments), K, params={"lambda": lam},
                             dropped_steps=data.dropped_steps(K), warnings=list(theta0.warnings))
    theta_minus = theta0
    chosen = []
    logdet_prior = np.inf
    last_cal = None
    for seg in segments:
        cand = chosen + [seg]
        t = time.perf_counter()
        counters["calibrate_calls"] += 1
        try:
            theta_plus, cal = calibrate(cand, theta_minus, noise, options)
        except NumericalError as exc:
            timings["calibrate"] += time.perf_counter() - t
            report.decisions.append(SegmentDecision(seg.index, np.nan, np.nan, False, str(exc)))
            log.warning("segment %d rejected: %s", seg.index, exc)
            continue
        timings["calibrate"] += time.perf_counter() - t
        counters["calibrate_residual_block_evals"] += cal.residual_block_evals

        t = time.perf_counter()
        acc = info_mod.MarginalInfo(np.zeros((theta0.theta_dim,) * 2), point="estimate")
        scal = np.nan
        try:
            for s in cand:
                counters["segment_jacobian_evals"] += 1
                H = info_mod.segment_marginal(s, theta_plus, noise)
                acc.add(s.index, H)
                if s is seg:
                    scal = _scalar(H)
            logdet_post = _logdet_sigma(acc.H)
            u = info_mod.utility(logdet_prior, logdet_post)
        except ImuCalError as exc:
            timings["evaluate"] += time.perf_counter() - t
            report.decisions.append(SegmentDecision(seg.index, scal, np.nan, False, str(exc)))
            continue
        timings["evaluate"] += time.perf_counter() - t
        accept = not chosen or u > lam
        if accept:
            chosen = cand
            theta_minus = theta_plus
            logdet_prior = logdet_post
            last_cal = cal
            report.selected.append(seg.index)
        report.decisions.append(SegmentDecision(seg.index, scal, u, accept))
    report.state, report.calibration = theta_minus, last_cal
    report.counters, report.timings = counters, timings
    return report


def select_m_largest(data, noise, M, K=100, theta0=None, options=None):
    """The ``M`` segments with the largest individual information at ``theta0``.

    Ties go to the lower index; segments whose information cannot be
    factored are excluded from the ranking.
    """
    segments, theta0 = _setup(data, K, theta0)
    if not 1 <= M <= len(segments):
        raise ConfigError(f"M must lie in [1, {len(segments)}]")
    counters, timings = _counters(), {"evaluate": 0.0, "calibrate": 0.0}
    report = SelectionReport("m-largest", [], len(segments), K, params={"M": M},
                             dropped_steps=data.dropped_steps(K), warnings=list(theta0.warnings))
    t = time.perf_counter()
    scalars = []
    for seg in segments:
        counters["segment_jacobian_evals"] += 1
        try:
            scalars.append(_scalar(info_mod.segment_marginal(seg, theta0, noise)))
        except ImuCalError:
            scalars.append(-np.inf)
    ranked = [i for i in sorted(range(len(segments)), key=lambda i: (-scalars[i], i)) if np.isfinite(scalars[i])]
    report.selected = sorted(segments[i].index for i in ranked[:M])
    chosen = set(report.selected)
    report.decisions = [SegmentDecision(s.index, v, np.nan, s.index in chosen) for s, v in zip(segments, scalars)]
    timings["evaluate"] = time.perf_counter() - t
    _finish(report, segments, theta0, noise, options, counters, timings)
    report.counters, report.timings = counters, timings
    return report


def select_baseline(data, noise, K=100, theta0=None, options=None):
    """Calibrate on every segment."""
    segments, theta0 = _setup(data, K, theta0)
    counters, timings = _counters(), {"evaluate": 0.0, "calibrate": 0.0}
    report = SelectionReport("baseline", [s.index for s in segments], len(segments), K,
                             dropped_steps=data.dropped_steps(K), warnings=list(theta0.warnings))
    report.decisions = [SegmentDecision(s.index, np.nan, np.nan, True) for s in segments]
    _finish(report, segments, theta0, noise, options, counters, timings)
    report.counters, report.timings = counters, timings
    return report


def run_policy(policy, data, noise, K=100, lam=0.5, M=None, theta0=None, options=None):
    """Dispatch on a policy name from :data:`POLICIES`."""
    if policy == "baseline":
        return select_baseline(data, noise, K, theta0, options)
    if policy == "greedy-original":
        return select_greedy_original(data, noise, lam, K, theta0, options)
    if policy == "greedy-init":
        return select_greedy_init_param(data, noise, lam, K, theta0, options)
    if policy == "m-largest":
        if M is None:
            raise ConfigError("m-largest requires M")
        return select_m_largest(data, noise, M, K, theta0, options)
    raise ConfigError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")


__all__ = [
    "POLICIES", "LMOptions", "SegmentDecision", "SelectionReport", "run_policy",
    "select_baseline", "select_greedy_init_param", "select_greedy_original", "select_m_largest",
]
