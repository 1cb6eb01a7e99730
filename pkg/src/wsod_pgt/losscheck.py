"""Verification driver for the loss kernels.

Three suites: hand-computed fixtures (shipped as JSON), central finite
differences against analytic gradients, and agreement with vectorised
numpy re-implementations on random inputs.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable

import numpy as np

from wsod_pgt import losses
from wsod_pgt.losses import (
    Anchor,
    BagLossInput,
    LossDomainError,
    ProposalCluster,
    RPNBatchInput,
)

FD_TOLERANCE = 1e-6
ORACLE_TOLERANCE = 1e-10
FD_STEP = 1e-6
KINK_EXCLUSION = 1e-3


class FixtureError(ValueError):
    """The fixture file is unreadable or describes an invalid case."""


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    error: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" {self.detail}" if self.detail else ""
        return f"{status} {self.suite}:{self.name} max_err={self.error:.3e}{extra}"


# --------------------------------------------------------------------------
# fixtures


def _build_rpn(args: dict[str, Any]) -> RPNBatchInput:
    anchors = [
        Anchor(a["p"], a["label"], tuple(a.get("t", (0.0,) * 4)), tuple(a.get("t_star", (0.0,) * 4)))
        for a in args["anchors"]
    ]
    return RPNBatchInput(tuple(anchors), args["n_cls"], args["n_reg"], args.get("lam", 1.0))


def _build_bag(args: dict[str, Any]) -> BagLossInput:
    clusters = [ProposalCluster(c["confidence"], tuple(c["member_scores"])) for c in args.get("clusters", [])]
    return BagLossInput(
        args["n_proposals"],
        tuple(clusters),
        tuple(args.get("background_weights", ())),
        tuple(args.get("background_scores", ())),
    )


KERNELS: dict[str, Callable[[dict[str, Any]], float]] = {
    "smooth_l1": lambda a: losses.smooth_l1(a["x"]),
    "frcnn_loss": lambda a: losses.frcnn_loss(a["p"], a["u"], a["t"], a["v"], a.get("lam", 1.0)),
    "rpn_loss": lambda a: losses.rpn_loss(_build_rpn(a)),
    "pcl_bag_loss": lambda a: losses.pcl_bag_loss(_build_bag(a)),
}


def load_fixtures(text: str | None = None) -> list[dict[str, Any]]:
    if text is None:
        text = resources.files("wsod_pgt.data").joinpath("loss_fixtures.json").read_text("utf-8")
    try:
        cases = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FixtureError(f"fixture file is not valid JSON: {exc}") from None
    if not isinstance(cases, list) or not cases:
        raise FixtureError("fixture file must hold a nonempty JSON list")
    for i, case in enumerate(cases):
        if not isinstance(case, dict) or case.get("kernel") not in KERNELS:
            raise FixtureError(f"case {i}: unknown or missing kernel")
        if not isinstance(case.get("args"), dict):
            raise FixtureError(f"case {i}: args must be an object")
        if "expected" not in case and case.get("expected_error") != "domain":
            raise FixtureError(f"case {i}: needs 'expected' or expected_error='domain'")
    return cases


def run_fixture(case: dict[str, Any]) -> CheckResult:
    name = case.get("name", case["kernel"])
    try:
        value = KERNELS[case["kernel"]](case["args"])
    except LossDomainError as exc:
        ok = case.get("expected_error") == "domain"
        return CheckResult("fixture", name, ok, detail="" if ok else f"unexpected domain error: {exc}")
    except (KeyError, TypeError, ValueError) as exc:
        raise FixtureError(f"{name}: invalid arguments: {exc}") from None
    if case.get("expected_error"):
        return CheckResult("fixture", name, False, detail=f"expected a domain error, got {value!r}")
    expected = float(case["expected"])
    err = abs(value - expected)
    return CheckResult("fixture", name, err <= float(case.get("tol", 0.0)), err)


# --------------------------------------------------------------------------
# finite differences


def _central(f: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def _away_from_kink(rng: random.Random, lo: float = -3.0, hi: float = 3.0) -> float:
    while True:
        x = rng.uniform(lo, hi)
        if abs(abs(x) - 1.0) > KINK_EXCLUSION and abs(x) > KINK_EXCLUSION:
            return x


def fd_smooth_l1(rng: random.Random, n: int = 100) -> float:
    worst = 0.0
    for _ in range(n):
        x = _away_from_kink(rng)
        worst = max(worst, abs(_central(losses.smooth_l1, x) - losses.smooth_l1_grad(x)))
    return worst


def fd_frcnn(rng: random.Random, n: int = 100) -> float:
    worst = 0.0
    for _ in range(n):
        c = rng.randint(1, 4)
        raw = [rng.uniform(0.1, 1.0) for _ in range(c + 1)]
        p = [r / math.fsum(raw) for r in raw]
        p[-1] = 1.0 - math.fsum(p[:-1])
        u = rng.randint(1, c)
        v = [rng.uniform(-1, 1) for _ in range(4)]
        d = [_away_from_kink(rng) for _ in range(4)]
        t = [vi + di for vi, di in zip(v, d)]
        lam = rng.uniform(0.1, 2.0)
        for i in range(4):
            def f(x: float, i: int = i) -> float:
                tt = list(t)
                tt[i] = x
                return losses.frcnn_loss(p, u, tt, v, lam)
            analytic = lam * losses.smooth_l1_grad(t[i] - v[i])
            worst = max(worst, abs(_central(f, t[i]) - analytic))
    return worst


def fd_rpn(rng: random.Random, n: int = 100) -> float:
    worst = 0.0
    for _ in range(n):
        anchors = [Anchor(rng.uniform(0.1, 0.9), rng.randint(0, 1)) for _ in range(rng.randint(1, 5))]
        n_cls, n_reg = rng.uniform(1, 10), rng.uniform(1, 10)
        i = rng.randrange(len(anchors))
        a = anchors[i]

        def f(x: float) -> float:
            changed = list(anchors)
            changed[i] = Anchor(x, a.label, a.t, a.t_star)
            return losses.rpn_loss(RPNBatchInput(tuple(changed), n_cls, n_reg))
        analytic = (-1.0 / a.p if a.label else 1.0 / (1.0 - a.p)) / n_cls
        worst = max(worst, abs(_central(f, a.p) - analytic) / max(1.0, abs(analytic)))
    return worst


def fd_bag(rng: random.Random, n: int = 100) -> float:
    worst = 0.0
    for _ in range(n):
        members = [rng.uniform(0.1, 0.9) for _ in range(rng.randint(1, 4))]
        s = rng.uniform(0.1, 1.0)
        n_bg = rng.randint(0, 3)
        weights = [rng.uniform(0, 1) for _ in range(n_bg)]
        bg = [rng.uniform(0.1, 1.0) for _ in range(n_bg)]
        r = len(members) + n_bg

        def f(x: float) -> float:
            m = [x] + members[1:]
            return losses.pcl_bag_loss(BagLossInput(r, (ProposalCluster(s, tuple(m)),), tuple(weights), tuple(bg)))
        analytic = -s * len(members) / (r * sum(members))
        worst = max(worst, abs(_central(f, members[0]) - analytic))
    return worst


# --------------------------------------------------------------------------
# direct-summation oracles (numpy, written independently of the kernels)


def oracle_smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1, 0.5 * ax**2, ax - 0.5)


def oracle_frcnn(p: np.ndarray, u: int, t: np.ndarray, v: np.ndarray, lam: float) -> float:
    return float(-np.log(p[u]) + lam * float(u >= 1) * oracle_smooth_l1(t - v).sum())


def oracle_rpn(p: np.ndarray, y: np.ndarray, t: np.ndarray, ts: np.ndarray,
               n_cls: float, n_reg: float, lam: float) -> float:
    cls = -(y * np.log(np.where(y == 1, p, 1.0)) + (1 - y) * np.log(np.where(y == 0, 1 - p, 1.0)))
    reg = y * oracle_smooth_l1(t - ts).sum(axis=1)
    return float(cls.sum() / n_cls + lam * reg.sum() / n_reg)


def oracle_bag(clusters: list[tuple[float, np.ndarray]], w: np.ndarray, bg: np.ndarray, r: int) -> float:
    total = sum(s * len(m) * np.log(m.mean()) for s, m in clusters)
    total += float((w * np.log(bg)).sum()) if len(bg) else 0.0
    return float(-total / r)


def oracle_suite(rng: random.Random, n: int = 200) -> dict[str, float]:
    worst = {"smooth_l1": 0.0, "frcnn_loss": 0.0, "rpn_loss": 0.0, "pcl_bag_loss": 0.0}
    for _ in range(n):
        x = rng.uniform(-4, 4)
        worst["smooth_l1"] = max(worst["smooth_l1"], abs(losses.smooth_l1(x) - float(oracle_smooth_l1(np.array(x)))))

        c = rng.randint(1, 5)
        raw = np.array([rng.uniform(0.05, 1) for _ in range(c + 1)])
        p = raw / raw.sum()
        u = rng.randint(0, c)
        t = np.array([rng.uniform(-3, 3) for _ in range(4)])
        v = np.array([rng.uniform(-3, 3) for _ in range(4)])
        lam = rng.uniform(0, 3)
        got = losses.frcnn_loss(list(p), u, list(t), list(v), lam)
        worst["frcnn_loss"] = max(worst["frcnn_loss"], abs(got - oracle_frcnn(p, u, t, v, lam)))

        k = rng.randint(1, 6)
        ps = np.array([rng.uniform(0.01, 0.99) for _ in range(k)])
        ys = np.array([rng.randint(0, 1) for _ in range(k)])
        ts = np.array([[rng.uniform(-3, 3) for _ in range(4)] for _ in range(k)])
        tss = np.array([[rng.uniform(-3, 3) for _ in range(4)] for _ in range(k)])
        n_cls, n_reg, lam = rng.uniform(1, 256), rng.uniform(1, 2400), rng.uniform(0, 10)
        batch = RPNBatchInput(
            tuple(Anchor(float(ps[i]), int(ys[i]), tuple(ts[i]), tuple(tss[i])) for i in range(k)),
            n_cls, n_reg, lam,
        )
        worst["rpn_loss"] = max(worst["rpn_loss"], abs(losses.rpn_loss(batch) - oracle_rpn(ps, ys, ts, tss, n_cls, n_reg, lam)))

        cl = [(rng.uniform(0, 1), np.array([rng.uniform(0.01, 1) for _ in range(rng.randint(1, 4))]))
              for _ in range(rng.randint(0, 3))]
        nb = rng.randint(0 if cl else 1, 4)
        w = np.array([rng.uniform(0, 1) for _ in range(nb)])
        bg = np.array([rng.uniform(0.01, 1) for _ in range(nb)])
        r = sum(len(m) for _, m in cl) + nb
        inp = BagLossInput(r, tuple(ProposalCluster(s, tuple(m)) for s, m in cl), tuple(w), tuple(bg))
        worst["pcl_bag_loss"] = max(worst["pcl_bag_loss"], abs(losses.pcl_bag_loss(inp) - oracle_bag(cl, w, bg, r)))
    return worst


def run_all(fixtures_text: str | None = None, seed: int = 0) -> list[CheckResult]:
    """Run every suite. Raises :class:`FixtureError` for unusable fixtures."""
    results = [run_fixture(c) for c in load_fixtures(fixtures_text)]
    rng = random.Random(seed)
    for name, fn in (("smooth_l1", fd_smooth_l1), ("frcnn_loss", fd_frcnn),
                     ("rpn_loss", fd_rpn), ("pcl_bag_loss", fd_bag)):
        err = fn(rng)
        results.append(CheckResult("finite-diff", name, err < FD_TOLERANCE, err))
    for name, err in oracle_suite(rng).items():
        results.append(CheckResult("oracle", name, err <= ORACLE_TOLERANCE, err))
    return results
