"""Statistical comparison of run groups.

Welch's unequal-variance t-test with the Welch-Satterthwaite degrees of
freedom; one-sided p-values come from the regularized incomplete beta
function, P(T > t) = I_{nu/(nu+t^2)}(nu/2, 1/2) / 2 for t >= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

_VAR_FLOOR = 1e-12


@dataclass
class WelchResult:
    t: float
    df: float
    p_greater: float  # P-value for H1: mean(a) > mean(b)

    @property
    def confidence(self) -> float:
        """Confidence, in percent, that group a's mean exceeds group b's."""
        return 100.0 * (1.0 - self.p_greater)


def _t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def welch_t_test(a, b) -> WelchResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two samples")
    ma, mb = a.mean(), b.mean()
    va = max(a.var(ddof=1), _VAR_FLOOR)
    vb = max(b.var(ddof=1), _VAR_FLOOR)
    sa, sb = va / a.size, vb / b.size
    se = math.sqrt(sa + sb)
    t = (ma - mb) / se
    df = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    if abs(ma - mb) < 1e-300 and va <= _VAR_FLOOR and vb <= _VAR_FLOOR:
        return WelchResult(t=0.0, df=df, p_greater=0.5)
    return WelchResult(t=t, df=df, p_greater=_t_sf(t, df))


def compare_groups(groups: dict[str, np.ndarray]) -> list[dict]:
    """All ordered pairwise one-sided comparisons between named groups."""
    names = list(groups)
    rows = []
    for i, na in enumerate(names):
        for nb in names:
            if na == nb:
                continue
            res = welch_t_test(groups[na], groups[nb])
            rows.append({
                "a": na, "b": nb,
                "mean_a": float(np.mean(groups[na])),
                "mean_b": float(np.mean(groups[nb])),
                "t": res.t, "df": res.df, "p_greater": res.p_greater,
                "confidence_pct": res.confidence,
            })
    return rows
