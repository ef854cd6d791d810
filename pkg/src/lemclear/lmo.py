"""Local market operator: closed-form coordination subproblem, multiplier
ascent and the prosumer/bus aggregation maps.

The coordinator holds auxiliary copies of every prosumer's net power and of
the network loss.  Its subproblem minimizes the wholesale bill of the implied
grid exchange plus the consensus penalties; eliminating the grid exchange via
the market balance leaves an unconstrained convex quadratic whose stationary
point is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import AdmmConfig, Scenario

__all__ = [
    "LmoState",
    "SubproblemIResult",
    "solve_subproblem_I",
    "aggregate_to_nodes",
    "map_dlmp_to_prosumers",
    "update_power_dual",
    "update_loss_dual",
    "subproblem_I_objective",
]


@dataclass
class LmoState:
    """Coordinator-side iterate: multipliers, auxiliary copies and the
    prosumer-to-bus incidence (psi) with its transpose (psi_prime)."""

    lambda_p: dict[str, np.ndarray]
    lambda_loss: np.ndarray
    p_tilde: dict[str, np.ndarray] | None
    p_loss_tilde: np.ndarray
    psi: dict[str, int]
    psi_prime: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.psi_prime:
            inv: dict[int, list[str]] = {}
            for a, n in self.psi.items():
                inv.setdefault(n, []).append(a)
            self.psi_prime = {n: tuple(sorted(v)) for n, v in inv.items()}
        else:
            for n, agents in self.psi_prime.items():
                for a in agents:
                    if self.psi.get(a) != n:
                        raise ValueError("psi_prime is not the transpose of psi")


@dataclass
class SubproblemIResult:
    p_tilde: dict[str, np.ndarray]
    p_loss_tilde: np.ndarray
    p_ug: np.ndarray
    objective: float


def solve_subproblem_I(
    state: LmoState,
    wem_price: np.ndarray,
    dt: float,
    p_net_star: dict[str, np.ndarray],
    p_loss_star: np.ndarray,
    cfg: AdmmConfig,
    background_total: np.ndarray | None = None,
) -> SubproblemIResult:
    """Closed-form coordinator update.

    With the grid exchange eliminated through the market balance, the
    stationarity conditions give, per prosumer and hour,

        p_tilde = p_star - (wem*dt + lambda_p) / rho
        p_loss_tilde = p_loss_star - (wem*dt + lambda_loss) / rho'

    and the grid exchange is reconstructed from the balance (including any
    non-participating background load the coordinator supplies).
    """
    if cfg.rho <= 0 or cfg.rho_prime <= 0:
        raise ValueError("penalty weights must be positive")
    w = np.asarray(wem_price, dtype=float) * dt
    p_tilde = {
        a: p_net_star[a] - (w + state.lambda_p[a]) / cfg.rho
        for a in sorted(p_net_star)
    }
    p_loss_tilde = p_loss_star - (w + state.lambda_loss) / cfg.rho_prime
    p_ug = p_loss_tilde.copy()
    for a in sorted(p_tilde):
        p_ug = p_ug + p_tilde[a]
    if background_total is not None:
        p_ug = p_ug + background_total
    obj = _objective(
        state, wem_price, dt, p_net_star, p_loss_star, cfg, p_tilde, p_loss_tilde, p_ug
    )
    return SubproblemIResult(p_tilde, p_loss_tilde, p_ug, obj)


def _objective(state, wem_price, dt, p_star, pl_star, cfg, p_tilde, pl_tilde, p_ug):
    w = np.asarray(wem_price, dtype=float) * dt
    val = float(w @ p_ug)
    for a in sorted(p_tilde):
        d = p_tilde[a] - p_star[a]
        val += float(state.lambda_p[a] @ d) + 0.5 * cfg.rho * float(d @ d)
    dl = pl_tilde - pl_star
    val += float(state.lambda_loss @ dl) + 0.5 * cfg.rho_prime * float(dl @ dl)
    return val


def subproblem_I_objective(
    state: LmoState,
    wem_price: np.ndarray,
    dt: float,
    p_net_star: dict[str, np.ndarray],
    p_loss_star: np.ndarray,
    cfg: AdmmConfig,
    p_tilde: dict[str, np.ndarray],
    p_loss_tilde: np.ndarray,
    background_total: np.ndarray | None = None,
) -> float:
    """Evaluate the coordinator objective at an arbitrary candidate point
    (used by tests to certify the closed form against a numerical solve)."""
    p_ug = p_loss_tilde.copy()
    for a in sorted(p_tilde):
        p_ug = p_ug + p_tilde[a]
    if background_total is not None:
        p_ug = p_ug + background_total
    return _objective(
        state, wem_price, dt, p_net_star, p_loss_star, cfg, p_tilde, p_loss_tilde, p_ug
    )


def aggregate_to_nodes(
    psi: dict[str, int],
    p_net: dict[str, np.ndarray],
    scenario: Scenario,
) -> dict[int, np.ndarray]:
    """Sum co-located prosumers onto their buses; buses without prosumers
    carry only the scenario's non-participating background load."""
    out = {
        bid: scenario.background_at(bid).copy()
        for bid in scenario.network.bus_ids()
    }
    for a in sorted(p_net):
        if a not in psi:
            raise KeyError(f"prosumer {a} has no bus mapping")
        out[psi[a]] = out[psi[a]] + p_net[a]
    return out


def map_dlmp_to_prosumers(
    psi_prime: dict[int, tuple[str, ...]],
    dlmp: dict[int, np.ndarray],
) -> dict[str, np.ndarray]:
    """Project bus prices onto the prosumers located there, unchanged."""
    out: dict[str, np.ndarray] = {}
    for n, agents in psi_prime.items():
        if n not in dlmp:
            raise KeyError(f"no price available for bus {n}")
        for a in agents:
            out[a] = dlmp[n].copy()
    return out


def update_power_dual(
    state: LmoState,
    p_tilde: dict[str, np.ndarray],
    p_net: dict[str, np.ndarray],
    cfg: AdmmConfig,
) -> dict[str, np.ndarray]:
    """Multiplier ascent on the net-power consensus residual."""
    return {
        a: state.lambda_p[a] + cfg.rho * (p_tilde[a] - p_net[a])
        for a in sorted(state.lambda_p)
    }


def update_loss_dual(
    state: LmoState,
    p_loss_tilde: np.ndarray,
    p_loss: np.ndarray,
    cfg: AdmmConfig,
) -> np.ndarray:
    """Multiplier ascent on the loss consensus residual."""
    return state.lambda_loss + cfg.rho_prime * (p_loss_tilde - p_loss)
