"""Surrogate-gated simulated annealing for the volume-constrained problem.

Objective: g(x) = compliance(x) + lambda * max(v(x) - v_c, 0).  Moves flip up
to n_v members inside one randomly chosen subregion.  With the gate enabled,
each candidate is first scored by the surrogate (plus the exact volume
penalty); candidates predicted at or above the adaptive threshold c skip the
structural analysis entirely, and c shrinks by w_d on each pass and grows by
w_i on each skip.  Only truly analyzed values ever enter the chain or the
reported optima.  Local-search mode pins T = 0 (strict-improvement only) for
a single cooling period.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import fem, lattice, mlp
from .lattice import GridSpec, UnitTopology

MODE_SA = "sa"
MODE_LOCAL = "local"


@dataclass(frozen=True)
class SAConfig:
    lam: float = 10.0  # penalty coefficient
    v_c: float = 0.26  # volume cap, m^3
    a: float = 0.88  # cooling coefficient
    n_s: int = 50  # cooling steps
    p: int = 640  # iterations per temperature
    n_v: int = 3  # max members flipped per move
    w_d: float = 0.001  # gate threshold decrement on pass
    w_i: float = 0.0003  # gate threshold increment on skip
    seed: int = 0
    gate: bool = True
    mode: str = MODE_SA
    threshold: float = fem.DEFAULT_THRESHOLD  # compliance screening cut

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError("cooling coefficient must be in (0, 1)")
        if not 1 <= self.n_v <= 8:
            raise ValueError("n_v must be in 1..8")
        if self.w_d < 0 or self.w_i < 0:
            raise ValueError("gate adjustments must be nonnegative")
        if self.lam <= 0:
            raise ValueError("penalty coefficient must be positive")
        if self.mode not in (MODE_SA, MODE_LOCAL):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def iterations(self) -> int:
        return self.p if self.mode == MODE_LOCAL else self.p * self.n_s


@dataclass(frozen=True)
class Solution:
    bits: np.ndarray
    compliance: float
    volume: float
    penalized: float


@dataclass
class SAResult:
    config: SAConfig
    best_feasible: Solution | None
    best_penalized: Solution
    analysis_count: int
    iteration_count: int
    history: dict  # per-iteration arrays: iter, T, c, analyzed, y_current, best_feasible_g


def penalized_objective(compliance: float, volume: float, lam: float, v_c: float) -> float:
    """g = compliance + lambda * max(volume - v_c, 0)."""
    return compliance + lam * max(volume - v_c, 0.0)


def neighbor(x: UnitTopology, rng: np.random.Generator, n_v: int) -> UnitTopology:
    """Flip 1..n_v distinct members within one uniformly chosen subregion."""
    m = x.m
    node = int(rng.integers(m * m))
    members = lattice.incidence_table(m)[node]
    distinct = members[np.sort(np.unique(members, return_index=True)[1])]
    count = min(int(rng.integers(1, n_v + 1)), len(distinct))
    flips = rng.choice(distinct, size=count, replace=False)
    bits = x.bits.copy()
    bits[flips] ^= 1
    return UnitTopology(m, bits)


def transition_probability(y_new: float, y_prev: float, temperature: float, s: float) -> float:
    """Metropolis acceptance: 1 for improvements, exp((y_prev-y_new)/(T s)) otherwise."""
    if y_new < y_prev:
        return 1.0
    if temperature <= 0.0:
        return 0.0
    return math.exp((y_prev - y_new) / (temperature * s))


def run(
    initial: UnitTopology,
    cfg: SAConfig,
    evaluator: fem.UnitEvaluator | None = None,
    surrogate: mlp.SurrogateModel | None = None,
) -> SAResult:
    """Run the annealer (or T=0 local search) from a stable initial topology.

    The proposal stream and the acceptance stream use independent generators
    spawned from cfg.seed, so gated and ungated runs see identical candidate
    sequences until the first gate rejection diverges the chains.
    """
    if cfg.gate and surrogate is None:
        raise ValueError("gated runs need a surrogate model")
    spec = GridSpec(initial.m)
    if evaluator is None:
        evaluator = fem.get_evaluator(spec)

    seq_prop, seq_acc = np.random.SeedSequence(cfg.seed).spawn(2)
    prop_rng = np.random.default_rng(seq_prop)
    acc_rng = np.random.default_rng(seq_acc)

    volume, result = evaluator.analyze(initial, cfg.threshold)
    if not result.stable:
        raise ValueError("initial topology is unstable under the screening threshold")
    y0 = penalized_objective(result.compliance, volume, cfg.lam, cfg.v_c)

    best_pen = Solution(initial.bits, result.compliance, volume, y0)
    best_feas = best_pen if volume <= cfg.v_c else None

    c = y0
    s = 0.1 * y0 / math.log(2.0)
    temperature = 0.0 if cfg.mode == MODE_LOCAL else 1.0
    x_cur, y_cur = initial, y0
    analyses = 0
    total = cfg.iterations

    h_temp = np.empty(total)
    h_c = np.empty(total)
    h_analyzed = np.zeros(total, dtype=np.uint8)
    h_y = np.empty(total)
    h_best = np.empty(total)

    for k in range(1, total + 1):
        cand = neighbor(x_cur, prop_rng, cfg.n_v)
        do_analysis = True
        if cfg.gate:
            cand_vol = lattice.unit_volume(cand, spec)
            y_pred = mlp.predict(surrogate, cand) + cfg.lam * max(cand_vol - cfg.v_c, 0.0)
            if y_pred < c:
                c -= cfg.w_d
            else:
                c += cfg.w_i
                do_analysis = False

        if do_analysis:
            cand_vol, cand_res = evaluator.analyze(cand, cfg.threshold)
            analyses += 1
            if cand_res.stable:
                y_new = penalized_objective(cand_res.compliance, cand_vol, cfg.lam, cfg.v_c)
                cand_sol = Solution(cand.bits, cand_res.compliance, cand_vol, y_new)
                if y_new < best_pen.penalized:
                    best_pen = cand_sol
                if cand_vol <= cfg.v_c and (
                    best_feas is None or cand_res.compliance < best_feas.compliance
                ):
                    best_feas = cand_sol
            else:
                y_new = math.inf
            prob = transition_probability(y_new, y_cur, temperature, s)
            if acc_rng.random() < prob:
                x_cur, y_cur = cand, y_new

        idx = k - 1
        h_temp[idx] = temperature
        h_c[idx] = c
        h_analyzed[idx] = 1 if do_analysis else 0
        h_y[idx] = y_cur
        h_best[idx] = best_feas.compliance if best_feas is not None else math.inf

        if cfg.mode == MODE_SA and k % cfg.p == 0:
            temperature *= cfg.a

    return SAResult(
        config=cfg,
        best_feasible=best_feas,
        best_penalized=best_pen,
        analysis_count=analyses,
        iteration_count=total,
        history={
            "iter": np.arange(1, total + 1),
            "T": h_temp,
            "c": h_c,
            "analyzed": h_analyzed,
            "y_current": h_y,
            "best_feasible_g": h_best,
        },
    )


def brute_force(
    m: int,
    spec: GridSpec | None = None,
    lam: float = 10.0,
    v_c: float = 0.26,
    threshold: float = fem.DEFAULT_THRESHOLD,
):
    """Exhaustive optimum over all 2**(4m^2) topologies (m <= 2 only).

    Returns (best_penalized, best_feasible); unstable topologies count as
    infinitely bad, feasibility means volume <= v_c.
    """
    if 4 * m * m > 16:
        raise ValueError("brute force supports m <= 2")
    if spec is None:
        spec = GridSpec(m)
    evaluator = fem.get_evaluator(spec)
    n_bits = 4 * m * m
    best_pen: Solution | None = None
    best_feas: Solution | None = None
    for assignment in itertools.product((0, 1), repeat=n_bits):
        x = UnitTopology(m, np.asarray(assignment, dtype=np.uint8))
        volume, result = evaluator.analyze(x, threshold)
        if not result.stable:
            continue
        g = penalized_objective(result.compliance, volume, lam, v_c)
        sol = Solution(x.bits, result.compliance, volume, g)
        if best_pen is None or g < best_pen.penalized:
            best_pen = sol
        if volume <= v_c and (best_feas is None or result.compliance < best_feas.compliance):
            best_feas = sol
    return best_pen, best_feas


def _solution_doc(sol: Solution | None):
    if sol is None:
        return None
    return {
        "bits": "".join("1" if b else "0" for b in sol.bits),
        "compliance": sol.compliance,
        "volume": sol.volume,
        "penalized": sol.penalized,
    }


def save_result(result: SAResult, path) -> None:
    cfg = result.config
    doc = {
        "config": {
            "lambda": cfg.lam,
            "v_c": cfg.v_c,
            "a": cfg.a,
            "n_s": cfg.n_s,
            "p": cfg.p,
            "n_v": cfg.n_v,
            "w_d": cfg.w_d,
            "w_i": cfg.w_i,
            "seed": cfg.seed,
            "gate": cfg.gate,
            "mode": cfg.mode,
            "threshold": cfg.threshold,
        },
        "best_feasible": _solution_doc(result.best_feasible),
        "best_penalized": _solution_doc(result.best_penalized),
        "analysis_count": result.analysis_count,
        "iteration_count": result.iteration_count,
    }
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def save_history(result: SAResult, path) -> None:
    h = result.history
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("iter,T,c,analyzed,y_current,best_feasible_g\n")
        for i in range(result.iteration_count):
            fh.write(
                f"{h['iter'][i]},{h['T'][i]:.17g},{h['c'][i]:.17g},"
                f"{h['analyzed'][i]},{h['y_current'][i]:.17g},{h['best_feasible_g'][i]:.17g}\n"
            )
