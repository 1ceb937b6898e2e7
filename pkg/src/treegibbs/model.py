"""Nearest-neighbour spin systems and single-site heat-bath kernels.

A model is a pair potential ``U(s, s')`` (symmetric, possibly forbidden) and a
singleton potential ``W(s)`` over dense spin indices ``0..q-1``. The Gibbs
weight of a configuration is ``exp(-sum_edges U - sum_sites W)``.

Spin index conventions (see ``SpinModel.labels``):

* Ising: index 0 is spin -1, index 1 is spin +1.
* hard-core: index 0 is empty, index 1 is occupied.
* Potts / colourings: index k is colour k + 1.

The Ising model keeps the +/-1 product convention ``U = -beta * s * s'`` while
Potts uses ``U = -beta * delta(s, s')`` (ferromagnetic) or ``+beta * delta``
(antiferromagnetic). For q = 2 the two differ by an additive constant and a
rescaling of beta by 2, which cancels in every probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np


class FrozenContradiction(ValueError):
    """Every spin value at a site is forbidden by its neighbours."""


@dataclass(frozen=True, eq=False)
class SpinModel:
    name: str
    labels: tuple
    pair_potential: np.ndarray
    forbidden: np.ndarray
    singleton_potential: np.ndarray
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pair = np.array(self.pair_potential, dtype=float)
        forb = np.array(self.forbidden, dtype=bool)
        single = np.array(self.singleton_potential, dtype=float)
        q = len(self.labels)
        if q < 2:
            raise ValueError("spin_count must be at least 2")
        if pair.shape != (q, q) or forb.shape != (q, q) or single.shape != (q,):
            raise ValueError("potential tables do not match the spin count")
        if not np.all(np.isfinite(pair)) or not np.all(np.isfinite(single)):
            raise ValueError("potentials must be finite; use the forbidden mask")
        if not np.array_equal(pair, pair.T) or not np.array_equal(forb, forb.T):
            raise ValueError("pair potential must be symmetric")
        if forb.all():
            raise ValueError("model is vacuous: every pair is forbidden")
        pair[forb] = 0.0
        log_pair = np.where(forb, -np.inf, -pair)
        for name, arr in (("pair_potential", pair), ("forbidden", forb),
                          ("singleton_potential", single), ("log_pair", log_pair),
                          ("log_single", -single)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def spin_count(self) -> int:
        return len(self.labels)

    @property
    def has_hard_constraints(self) -> bool:
        return bool(self.forbidden.any())

    @property
    def monotone_order(self) -> str | None:
        """Partial order under which heat-bath is monotone, if any."""
        if self.name == "ising":
            return "spin"
        if self.name == "hardcore":
            return "checkerboard"
        return None

    def index_of(self, label: Any) -> int:
        for i, lab in enumerate(self.labels):
            if str(lab) == str(label):
                return i
        raise KeyError(f"unknown spin label {label!r} for {self.name}")

    def describe(self) -> dict:
        """Structured descriptor, inverse of :func:`model_from_descriptor`."""
        return {"model": self.name, **self.params}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"SpinModel({self.name}, {args})"


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")


def make_ising(beta: float, h: float = 0.0) -> SpinModel:
    _check_finite(beta=beta, h=h)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    spins = np.array([-1.0, 1.0])
    pair = -beta * np.outer(spins, spins)
    single = -beta * h * spins
    return SpinModel("ising", (-1, 1), pair, np.zeros((2, 2), bool), single,
                     {"beta": float(beta), "h": float(h)})


def make_hardcore(lam: float) -> SpinModel:
    _check_finite(lam=lam)
    if lam <= 0:
        raise ValueError("activity lambda must be positive")
    forb = np.array([[False, False], [False, True]])
    single = np.array([0.0, -math.log(lam)])
    return SpinModel("hardcore", (0, 1), np.zeros((2, 2)), forb, single,
                     {"lambda": float(lam)})


def make_potts(q: int, beta: float, antiferro: bool = False) -> SpinModel:
    _check_finite(beta=beta)
    if int(q) != q or q < 2:
        raise ValueError("q must be an integer >= 2")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    q = int(q)
    sign = 1.0 if antiferro else -1.0
    pair = sign * beta * np.eye(q)
    return SpinModel("potts", tuple(range(1, q + 1)), pair, np.zeros((q, q), bool),
                     np.zeros(q), {"q": q, "beta": float(beta), "antiferro": bool(antiferro)})


def make_colorings(q: int) -> SpinModel:
    """Zero-temperature antiferromagnetic Potts: uniform proper colourings."""
    if int(q) != q or q < 2:
        raise ValueError("q must be an integer >= 2")
    q = int(q)
    return SpinModel("colorings", tuple(range(1, q + 1)), np.zeros((q, q)),
                     np.eye(q, dtype=bool), np.zeros(q), {"q": q})


def model_from_descriptor(desc: Mapping[str, Any]) -> SpinModel:
    """Build a model from ``{"model": ..., "beta": ..., ...}``."""
    kind = str(desc.get("model", "ising")).lower()
    if kind == "ising":
        return make_ising(float(desc.get("beta", 0.0)), float(desc.get("h", 0.0)))
    if kind == "hardcore":
        return make_hardcore(float(desc.get("lambda", 1.0)))
    if kind == "potts":
        anti = desc.get("antiferro", False)
        if isinstance(anti, str):
            anti = anti.strip().lower() in ("1", "true", "yes", "on")
        return make_potts(int(desc.get("q", 3)), float(desc.get("beta", 0.0)), bool(anti))
    if kind == "colorings":
        return make_colorings(int(desc.get("q", 3)))
    raise ValueError(f"unknown model {kind!r}")


def site_conditional(model: SpinModel, neighbors: Sequence[int]) -> np.ndarray:
    """Heat-bath distribution of a site given its neighbours' spin indices.

    ``p(s) ~ exp(-W(s) - sum_nb U(s, s_nb))``; spins forbidden by any neighbour
    get probability exactly zero.
    """
    logp = model.log_single.copy()
    for t in neighbors:
        logp = logp + model.log_pair[:, int(t)]
    top = logp.max()
    if top == -np.inf:
        raise FrozenContradiction(f"no admissible spin given neighbours {list(neighbors)}")
    p = np.exp(logp - top)
    return p / p.sum()


def log_gibbs_weight(model: SpinModel, tree, boundary, config: np.ndarray,
                     region=None) -> float:
    """Log of :func:`gibbs_weight`; ``-inf`` for invalid configurations."""
    config = np.asarray(config)
    if region is None:
        sites = np.arange(tree.n)
    else:
        sites = np.asarray(getattr(region, "vertices", region), dtype=int)
    inside = np.zeros(tree.n_total, dtype=bool)
    inside[sites] = True
    total = float(model.log_single[config[sites]].sum())
    for p, c in tree.edges(include_boundary=not boundary.is_free):
        if inside[p] or inside[c]:
            total += model.log_pair[config[p], config[c]]
    return total


def gibbs_weight(model: SpinModel, tree, boundary, config: np.ndarray,
                 region=None) -> float:
    """Unnormalised weight over the edges touching ``region`` and its sites.

    ``config`` covers all of T followed by the boundary vertices, in the
    tree's vertex order. With ``region=None`` the whole tree is used.
    """
    return float(np.exp(log_gibbs_weight(model, tree, boundary, config, region)))
