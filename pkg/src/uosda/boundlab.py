"""Exact bound terms on finite open-set instances.

A :class:`DiscreteInstance` puts a source joint over ``m`` points x ``K`` known
classes and a target joint over ``m`` points x ``K+1`` classes (the last one is
"unknown"). Hypotheses are all maps from points to ``{0..K}``; with 0-1 loss
every risk and discrepancy is a finite sum, so the target-risk bound with the
floored open set difference can be checked exhaustively.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

MAX_HYPOTHESES = 10**6
TOL = 1e-9


class SizeError(ValueError):
    pass


class DegenerateInstance(ValueError):
    pass


@dataclass
class DiscreteInstance:
    K: int
    p_src: np.ndarray  # m x K
    p_tgt: np.ndarray  # m x (K+1)

    def __post_init__(self):
        self.p_src = np.asarray(self.p_src, dtype=np.float64)
        self.p_tgt = np.asarray(self.p_tgt, dtype=np.float64)
        m = self.p_src.shape[0]
        if self.K < 1:
            raise ValueError("need K >= 1")
        if self.p_src.shape != (m, self.K) or self.p_tgt.shape != (m, self.K + 1):
            raise ValueError(f"tables must be m x K and m x (K+1), got {self.p_src.shape}, {self.p_tgt.shape}")
        for name, t in (("p_src", self.p_src), ("p_tgt", self.p_tgt)):
            if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a nonnegative table summing to 1")

    @property
    def m(self) -> int:
        return self.p_src.shape[0]

    @property
    def points(self) -> list[int]:
        return list(range(self.m))

    @property
    def pi(self) -> float:
        """Mass of the unknown class in the target."""
        return float(self.p_tgt[:, self.K].sum())

    def source_marginal(self) -> np.ndarray:
        return self.p_src.sum(axis=1)

    def target_marginal(self) -> np.ndarray:
        return self.p_tgt.sum(axis=1)

    def target_known_marginal(self) -> np.ndarray:
        """Target marginal conditioned on a known label."""
        return self.p_tgt[:, : self.K].sum(axis=1) / self._known_mass()

    def target_unknown_marginal(self) -> np.ndarray:
        pi = self.pi
        return self.p_tgt[:, self.K] / pi if pi > 0 else np.zeros(self.m)

    def _known_mass(self) -> float:
        # summed directly: 1 - pi cancels badly when pi is close to 1
        mass = float(self.p_tgt[:, : self.K].sum())
        if mass <= 0:
            raise DegenerateInstance("target has no known-class mass (pi = 1)")
        return mass

    def to_dict(self) -> dict:
        return {"points": self.points, "K": self.K, "p_src": self.p_src.tolist(), "p_tgt": self.p_tgt.tolist()}


def random_instance(rng: np.random.Generator, m: int, K: int) -> DiscreteInstance:
    """Dirichlet tables with a random concentration; some cells or the unknown column zeroed."""
    while True:
        conc = rng.choice([0.2, 1.0, 5.0])
        ps = rng.dirichlet(np.full(m * K, conc)).reshape(m, K)
        pt = rng.dirichlet(np.full(m * (K + 1), conc)).reshape(m, K + 1)
        u = rng.random()
        if u < 0.15:
            pt[:, K] = 0.0
        elif u < 0.3:
            # deterministic labels per point
            ps = ps * (np.arange(K) == rng.integers(0, K, size=(m, 1)))
            pt = pt * (np.arange(K + 1) == rng.integers(0, K + 1, size=(m, 1)))
        if ps.sum() <= 0 or pt[:, :K].sum() <= 0:
            continue
        return DiscreteInstance(K, ps / ps.sum(), pt / pt.sum())


# -- hypotheses -----------------------------------------------------------------

def _guard(m: int, K: int) -> None:
    if (K + 1) ** m > MAX_HYPOTHESES:
        raise SizeError(f"(K+1)^m = {(K + 1) ** m} exceeds the {MAX_HYPOTHESES} guard")


def enumerate_hypotheses(m: int, K: int) -> Iterator[tuple[int, ...]]:
    """Every map from m points to {0..K}, in lexicographic order."""
    _guard(m, K)
    return itertools.product(range(K + 1), repeat=m)


def constant_unknown(m: int, K: int) -> tuple[int, ...]:
    return (K,) * m


# -- risks ----------------------------------------------------------------------

def risk(inst: DiscreteInstance, h, which: str) -> float:
    """0-1 risk of ``h`` under the source or target joint."""
    h = np.asarray(h, dtype=np.int64)
    table = {"source": inst.p_src, "target": inst.p_tgt}[which]
    wrong = np.arange(table.shape[1])[None, :] != h[:, None]
    return float((table * wrong).sum())


def partial_risks(inst: DiscreteInstance, h) -> tuple[float, float, float, float]:
    """``(L_t_star, L_t_K1, L_s_uK1, L_t_uK1)``.

    ``L_t_star``: target risk on known classes, normalised by ``1 - pi``.
    ``L_t_K1``: risk on the unknown-class conditional (0 when pi = 0).
    ``L_s_uK1`` / ``L_t_uK1``: probability that h does not say "unknown" under
    the source / target marginal.
    """
    h = np.asarray(h, dtype=np.int64)
    K = inst.K
    known_wrong = np.arange(K)[None, :] != h[:, None]
    l_t_star = float((inst.p_tgt[:, :K] * known_wrong).sum()) / inst._known_mass()
    not_unknown = (h != K).astype(np.float64)
    pi = inst.pi
    l_t_k1 = float((inst.p_tgt[:, K] * not_unknown).sum()) / pi if pi > 0 else 0.0
    l_s_u = float(inst.source_marginal() @ not_unknown)
    l_t_u = float(inst.target_marginal() @ not_unknown)
    return l_t_star, l_t_k1, l_s_u, l_t_u


# -- discrepancies --------------------------------------------------------------

def _subset_masks(m: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=m))).reshape(-1, m)


def hdh_distance(P1, P2, K: int) -> float:
    """max over hypothesis pairs of |P1(disagree) - P2(disagree)|, via disagreement subsets."""
    P1 = np.asarray(P1, dtype=np.float64)
    P2 = np.asarray(P2, dtype=np.float64)
    m = len(P1)
    _guard(m, K)
    # with K + 1 >= 2 labels every subset of points is the disagreement set of some pair
    return float(np.abs(_subset_masks(m) @ (P1 - P2)).max())


def tensor_discrepancy(inst: DiscreteInstance, c) -> float:
    """Disagreement gap between source and known-target marginals with one side fixed to ``c``."""
    c = np.asarray(c, dtype=np.int64)
    _guard(inst.m, inst.K)
    # c fixed still leaves every point free to disagree, so every subset is reachable
    diff = inst.source_marginal() - inst.target_known_marginal()
    return float(np.abs(_subset_masks(inst.m) @ diff).max())


def lambda_term(inst: DiscreteInstance) -> float:
    """min over hypotheses of source risk plus known-target partial risk."""
    best = np.inf
    for h in enumerate_hypotheses(inst.m, inst.K):
        best = min(best, risk(inst, h, "source") + partial_risks(inst, h)[0])
    return float(best)


def open_set_terms(inst: DiscreteInstance, h, eps: float) -> tuple[float, float]:
    """``(delta, delta_eps)`` with ``delta_eps = max(-eps, delta)``."""
    _, _, l_s_u, l_t_u = partial_risks(inst, h)
    delta = l_t_u / inst._known_mass() - l_s_u
    return delta, max(-eps, delta)


# -- checks ---------------------------------------------------------------------

@dataclass
class BoundReport:
    hypothesis: tuple[int, ...]
    lhs: float
    source_risk: float
    tensor_disc: float
    hdh_disc: float
    lambda_term: float
    delta: float
    delta_eps: float
    rhs: float
    slack: float
    diff_bound_slack: float
    hdh_lower_slack: float
    tensor_hdh_slack: float
    decomp_residual: float

    @property
    def certified(self) -> bool:
        return (self.slack >= -TOL and self.diff_bound_slack >= -TOL and self.hdh_lower_slack >= -TOL
                and self.tensor_hdh_slack >= -TOL and self.decomp_residual <= 1e-12)

    def terms(self) -> dict:
        d = asdict(self)
        d.pop("hypothesis")
        return d


def check_decomposition(inst: DiscreteInstance, h) -> float:
    """|L^t - (1-pi) L_t_star - pi L_t_K1|."""
    l_t = risk(inst, h, "target")
    l_t_star, l_t_k1, _, _ = partial_risks(inst, h)
    return abs(l_t - inst._known_mass() * l_t_star - inst.pi * l_t_k1)


def check_diff_bound(inst: DiscreteInstance, h, hdh: float | None = None) -> tuple[float, float]:
    """Slacks of ``delta >= pi/(1-pi) L_t_K1 - d_HdH`` and of ``d_HdH >= -delta``."""
    if hdh is None:
        hdh = hdh_distance(inst.source_marginal(), inst.target_known_marginal(), inst.K)
    delta, _ = open_set_terms(inst, h, 0.0)
    _, l_t_k1, _, _ = partial_risks(inst, h)
    pi = inst.pi
    return delta - (pi / inst._known_mass() * l_t_k1 - hdh), hdh + delta


def check_target_bound(inst: DiscreteInstance, eps: float) -> list[BoundReport]:
    """Every term of the target-risk bound for every hypothesis on ``inst``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    inst._known_mass()
    lam = lambda_term(inst)
    hdh = hdh_distance(inst.source_marginal(), inst.target_known_marginal(), inst.K)
    reports = []
    for h in enumerate_hypotheses(inst.m, inst.K):
        l_t = risk(inst, h, "target")
        l_s = risk(inst, h, "source")
        tdisc = tensor_discrepancy(inst, h)
        delta, delta_eps = open_set_terms(inst, h, eps)
        lhs = l_t / inst._known_mass()
        rhs = l_s + 2 * tdisc + lam + delta_eps
        diff_b, hdh_low = check_diff_bound(inst, h, hdh)
        reports.append(BoundReport(
            h, lhs, l_s, tdisc, hdh, lam, delta, delta_eps, rhs, rhs - lhs,
            diff_b, hdh_low, hdh - tdisc, check_decomposition(inst, h),
        ))
    return reports


def counterexample(inst: DiscreteInstance, report: BoundReport) -> dict:
    return {**inst.to_dict(), "hypothesis": list(report.hypothesis), "terms": report.terms(), "slack": report.slack}


@dataclass
class SweepSummary:
    instances: int
    hypotheses: int
    min_slack: dict[str, float]
    max_decomp_residual: float
    violations: int
    first_counterexample: dict | None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def lines(self) -> list[str]:
        out = [f"instances checked: {self.instances}", f"hypotheses checked: {self.hypotheses}"]
        out += [f"min slack {k}: {v:.3e}" for k, v in self.min_slack.items()]
        out += [f"max decomposition residual: {self.max_decomp_residual:.3e}", f"violations: {self.violations}"]
        return out


def sweep(n_instances: int, m_max: int, k_max: int, eps: float, seed: int) -> SweepSummary:
    """Check seeded random instances with ``1 <= m <= m_max`` and ``1 <= K <= k_max``.

    Instance ``i`` draws from ``default_rng([seed, i])``, so any single instance
    can be regenerated on its own.
    """
    mins = {"target_bound": np.inf, "diff_bound": np.inf, "hdh_lower": np.inf, "tensor_vs_hdh": np.inf}
    max_resid = 0.0
    n_h = violations = 0
    first = None
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        m = int(rng.integers(1, m_max + 1))
        K = int(rng.integers(1, k_max + 1))
        inst = random_instance(rng, m, K)
        for r in check_target_bound(inst, eps):
            n_h += 1
            mins["target_bound"] = min(mins["target_bound"], r.slack)
            mins["diff_bound"] = min(mins["diff_bound"], r.diff_bound_slack)
            mins["hdh_lower"] = min(mins["hdh_lower"], r.hdh_lower_slack)
            mins["tensor_vs_hdh"] = min(mins["tensor_vs_hdh"], r.tensor_hdh_slack)
            max_resid = max(max_resid, r.decomp_residual)
            if not r.certified:
                violations += 1
                if first is None:
                    first = {"instance_index": i, **counterexample(inst, r)}
    mins = {k: (float(v) if np.isfinite(v) else float("nan")) for k, v in mins.items()}
    return SweepSummary(n_instances, n_h, mins, max_resid, violations, first)


def write_counterexample(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
