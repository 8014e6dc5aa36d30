"""Regenerate the shipped scenario presets under src/fedate/presets/."""

from __future__ import annotations

import json
from pathlib import Path

D = 10
HALF = D // 2
BETA1 = [-1.75, -1.5, -1.25, -1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5]
BETA0 = [-1.8, -1.6, -1.4, -1.2, -1.0, -0.8, -0.6, -0.4, -0.2, 0.0]
MU = [1.0] * HALF + [-1.0] * HALF
SIGMA = {"kind": "a*I+b*J", "a": 0.5, "b": 0.5}
H = [1.0, 0.2, -1.0, 30.0, 2.0]

SHIFT_MU = [
    [1.0] * HALF + [-1.0] * HALF,
    [-1.0] * HALF + [1.0] * HALF,
    [0.0] * D,
    [0.5] * HALF + [-1.0] * HALF,
    [1.2] * HALF + [0.8] * HALF,
]
# a·I + b·J forms of the five covariate-shift covariances
SHIFT_SIGMA = [
    {"kind": "a*I+b*J", "a": 0.5, "b": 0.5},
    {"kind": "a*I+b*J", "a": 10.5, "b": 9.5},
    {"kind": "a*I+b*J", "a": 0.71, "b": 0.01},
    {"kind": "a*I+b*J", "a": 1.0, "b": 0.35},
    {"kind": "a*I+b*J", "a": 1.25, "b": 0.6},
]

P_UNEQUAL = [0.9, 0.9, 0.9, 0.1, 0.1]
P_SMALL = [0.65, 0.65, 0.65, 0.35, 0.35]
P_HETERO = [0.75, 0.75, 0.75, 0.25, 0.25]


def scenario(name, sizes, p, mu=None, sigma=None, h=None, d=D, arm1=None, arm0=None, min_arm=D + 2):
    K = len(sizes)
    mu = mu or [MU] * K
    sigma = sigma or [SIGMA] * K
    h = h or [0.0] * K
    p = p if isinstance(p, list) else [p] * K
    return {
        "name": name,
        "K": K,
        "d": d,
        "sigma2": 1.0,
        "min_arm_size": min_arm,
        "arm1": arm1 or {"c": -1.85, "beta": BETA1},
        "arm0": arm0 or {"c": -2.0, "beta": BETA0},
        "studies": [
            {"n": n, "p": pk, "mu": m, "sigma": s, "h": hk}
            for n, pk, m, s, hk in zip(sizes, p, mu, sigma, h)
        ],
    }


def nonlinear():
    # Y(1) = -x2²/2 + x3²/2 + 3x4²/2 + x3·x4 ; Y(0) = -0.35x1² + x3²/2 + 3x4²/2 + x1·x2
    q1 = [[0, 0, 0, 0], [0, -0.5, 0, 0], [0, 0, 0.5, 0.5], [0, 0, 0.5, 1.5]]
    q0 = [[-0.35, 0.5, 0, 0], [0.5, 0, 0, 0], [0, 0, 0.5, 0], [0, 0, 0, 1.5]]
    zero = [0.0] * 4
    return scenario(
        "nonlinear-dm", [400] * 5, 0.5,
        mu=[[1.0, 1.0, -1.0, -1.0]] * 5, d=4,
        arm1={"c": 0.0, "beta": zero, "quad": q1},
        arm0={"c": 0.0, "beta": zero, "quad": q0},
        min_arm=6,
    )


PRESETS = [
    scenario("homog-large", [100 * D] * 5, 0.5),
    scenario("homog-large-unequal-p", [100 * D] * 5, P_UNEQUAL),
    scenario("homog-large-20d", [20 * D] * 5, P_UNEQUAL),
    scenario("homog-small", [6 * D] * 5, P_SMALL),
    scenario("homog-small-5d", [5 * D] * 5, 0.5),
    scenario("imbalanced", [400 * D] + [25 * D] * 4, 0.5),
    scenario("imbalanced-small", [13 * D] + [3 * D] * 4, 0.5),
    scenario("covariate-shift", [100 * D] * 5, 0.5, mu=SHIFT_MU, sigma=SHIFT_SIGMA),
    scenario("covariate-shift-small", [6 * D] * 5, 0.5, mu=SHIFT_MU, sigma=SHIFT_SIGMA),
    scenario("study-effects", [100 * D] * 5, 0.5, h=H),
    scenario("study-effects-unequal-p", [100 * D] * 5, P_UNEQUAL, h=H),
    scenario("full-hetero", [100 * D] * 5, P_HETERO, mu=SHIFT_MU, sigma=SHIFT_SIGMA, h=H),
    scenario("full-hetero-small", [6 * D] * 5, P_HETERO, mu=SHIFT_MU, sigma=SHIFT_SIGMA, h=H),
    nonlinear(),
]


def main():
    root = Path(__file__).resolve().parents[1] / "src" / "fedate" / "presets"
    root.mkdir(parents=True, exist_ok=True)
    for spec in PRESETS:
        (root / f"{spec['name']}.json").write_text(json.dumps(spec, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
