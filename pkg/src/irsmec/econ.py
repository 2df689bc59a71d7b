"""Offloading economics: device utilities, C_k / A_k constants and server earning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RateDomainError(ValueError):
    """A zero rate makes transmit time, and hence every ratio term, infinite."""


@dataclass(frozen=True)
class TaskProfile:
    """Computing and pricing parameters of one mobile device.

    Parameters
    ----------
    b : task data size (bits)
    d : CPU cycles needed by the task
    c_local : device CPU speed (cycles/s)
    c_edge : edge server CPU speed (cycles/s)
    mu : device energy per CPU cycle (J)
    nu : transmit energy per second (W)
    tail : tail energy after transmission (J)
    w_t, w_e : cost weights of time and energy
    benefit : value f_k of a completed task
    """

    b: float = 1.0
    d: float = 1.0
    c_local: float = 1.0
    c_edge: float = 10.0
    mu: float = 0.0
    nu: float = 0.0
    tail: float = 0.0
    w_t: float = 1.0
    w_e: float = 0.0
    benefit: float = 0.0

    def __post_init__(self):
        for name in ("b", "d", "mu", "nu", "tail", "w_t", "w_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.c_local <= 0 or self.c_edge <= 0:
            raise ValueError("CPU speeds must be positive")


@dataclass(frozen=True)
class OffloadEconomy:
    """Per-user constants C_k, A_k and rate floors r_k (nats)."""

    C: np.ndarray
    A: np.ndarray
    floors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, float))
        object.__setattr__(self, "A", np.asarray(self.A, float))
        object.__setattr__(self, "floors", np.asarray(self.floors, float))
        if not (self.C.shape == self.A.shape == self.floors.shape):
            raise ValueError("C, A and floors need one entry per user")
        if np.any(self.A < 0) or np.any(self.floors < 0):
            raise ValueError("A_k and r_k must be nonnegative")

    @property
    def K(self) -> int:
        return self.C.size

    @classmethod
    def flat(cls, K: int, A: float = 1.0, C: float = 0.0, floor: float = 0.0):
        """Identical users, e.g. the A_k = 1 setting of the earning experiments."""
        return cls(np.full(K, C), np.full(K, A), np.full(K, floor))


def local_utility(p: TaskProfile) -> float:
    return p.benefit - p.w_t * p.d / p.c_local - p.w_e * p.mu * p.d


def edge_utility(p: TaskProfile, rate: float, payment: float) -> float:
    """Utility of offloading at uplink ``rate`` and server price ``payment``."""
    if rate <= 0:
        raise RateDomainError("edge utility undefined at zero rate")
    t_send = p.b / rate
    t_exec = p.d / p.c_edge
    energy = p.nu * t_send + p.tail
    return p.benefit - p.w_t * (t_send + t_exec) - p.w_e * energy - payment


def cost_advantage(p: TaskProfile) -> float:
    """C_k: local cost minus edge cost, excluding transmission."""
    return (p.w_t * p.d / p.c_local + p.w_e * p.mu * p.d
            - p.w_t * p.d / p.c_edge - p.w_e * p.tail)


def transmission_weight(p: TaskProfile) -> float:
    """A_k: cost per unit of 1/R_k."""
    return (p.w_t + p.w_e * p.nu) * p.b


def derive_economy(profiles, floors) -> OffloadEconomy:
    profiles = list(profiles)
    floors = np.broadcast_to(np.asarray(floors, float), (len(profiles),))
    return OffloadEconomy(np.array([cost_advantage(p) for p in profiles]),
                          np.array([transmission_weight(p) for p in profiles]),
                          floors.copy())


def max_payment(econ: OffloadEconomy, k: int, rate: float) -> float:
    if rate <= 0:
        raise RateDomainError(f"user {k} has zero rate")
    return econ.C[k] - econ.A[k] / rate


def offload_decision(econ: OffloadEconomy, k: int, rate: float, payment: float) -> int:
    """1 when the device prefers edge computing at this price (ties offload)."""
    return int(payment <= max_payment(econ, k, rate))


def _rates(rates) -> np.ndarray:
    rates = np.asarray(rates, float)
    if np.any(rates <= 0):
        raise RateDomainError("all rates must be positive")
    return rates


def ratio_objective(econ: OffloadEconomy, rates) -> float:
    """sum_k A_k / R_k, the quantity minimized in place of the earning."""
    return float(np.sum(econ.A / _rates(rates)))


def server_earning_p2(econ: OffloadEconomy, rates) -> float:
    """sum_k (C_k - A_k/R_k); negative terms are compensation paid by the server."""
    return float(np.sum(econ.C - econ.A / _rates(rates)))


def server_earning_p1(econ: OffloadEconomy, rates) -> float:
    """sum_k max(C_k - A_k/R_k, 0): users who would lose money stay local."""
    return float(np.sum(np.maximum(econ.C - econ.A / _rates(rates), 0.0)))
