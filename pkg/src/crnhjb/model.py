"""Two-time-scale reaction network models.

A network has ``l`` slow species (scaled by the system size) and ``m`` fast
species whose total count is conserved.  Reactions carry a slow jump, a fast
jump and a rate written as a sum of monomials in the slow and fast counts.
Reactions are classified by which scales they move:

* class 1: only slow species,
* class 2: both scales,
* class 3: only fast species.

Control Hamiltonians (finite control sets with drift and running cost) share
the monomial machinery and live here as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class ModelError(ValueError):
    """Raised when a model document is malformed or violates an invariant."""

    def __init__(self, message: str, reaction: int | None = None):
        if reaction is not None:
            message = f"reaction {reaction}: {message}"
        super().__init__(message)
        self.reaction = reaction


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class Monomial:
    k: float
    x_exp: tuple[int, ...]
    y_exp: tuple[int, ...] = ()

    def __call__(self, x, y=()) -> float:
        val = self.k
        for xi, e in zip(x, self.x_exp):
            if e:
                val *= xi**e
        for yj, e in zip(y, self.y_exp):
            if e:
                val *= yj**e
        return val


@dataclass(frozen=True)
class RateFunction:
    """Sum of monomials ``k * prod x_i^a_i * prod y_j^b_j``."""

    monomials: tuple[Monomial, ...]

    def __call__(self, x, y=()) -> float:
        return float(sum(mono(x, y) for mono in self.monomials))

    def grad_x(self, x, y=()) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(len(x))
        for mono in self.monomials:
            for i, e in enumerate(mono.x_exp):
                if e == 0:
                    continue
                exps = list(mono.x_exp)
                exps[i] = e - 1
                out[i] += e * Monomial(mono.k, tuple(exps), mono.y_exp)(x, y)
        return out

    def to_json(self) -> dict:
        return {
            "monomials": [
                {"k": mono.k, "x_exp": list(mono.x_exp), "y_exp": list(mono.y_exp)}
                for mono in self.monomials
            ]
        }


@dataclass(frozen=True)
class Reaction:
    gamma_x: tuple[int, ...]
    gamma_y: tuple[int, ...]
    rate: RateFunction
    kind: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", classify(self.gamma_x, self.gamma_y))


def classify(gamma_x, gamma_y) -> int:
    """Return 1, 2 or 3 for the reaction class; raise on the zero jump."""
    slow = any(g != 0 for g in gamma_x)
    fast = any(g != 0 for g in gamma_y)
    if slow and fast:
        return 2
    if slow:
        return 1
    if fast:
        return 3
    raise ModelError("zero jump")


@dataclass(frozen=True)
class MultiScaleNetwork:
    slow_dim: int
    fast_dim: int
    conservation: int
    reactions: tuple[Reaction, ...]

    @property
    def classes(self) -> list[int]:
        return [r.kind for r in self.reactions]

    def to_json(self) -> dict:
        return {
            "slow_dim": self.slow_dim,
            "fast_dim": self.fast_dim,
            "conservation_M": self.conservation,
            "reactions": [
                {
                    "gamma_x": list(r.gamma_x),
                    "gamma_y": list(r.gamma_y),
                    "rate": r.rate.to_json(),
                }
                for r in self.reactions
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class FastStateSpace:
    states: tuple[tuple[int, ...], ...]
    index: dict

    def __len__(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(len(self.states), -1)


@dataclass(frozen=True)
class Control:
    label: str
    drift: tuple[RateFunction, ...]
    cost: RateFunction


@dataclass(frozen=True)
class ControlHamiltonian:
    """``H(x, p) = max_a { -f(x, a) . p - l(x, a) }`` over a finite control list."""

    controls: tuple[Control, ...]

    @property
    def slow_dim(self) -> int:
        return len(self.controls[0].drift)

    def to_json(self) -> dict:
        return {
            "controls": [
                {
                    "label": c.label,
                    "drift": [d.to_json() for d in c.drift],
                    "cost": c.cost.to_json(),
                }
                for c in self.controls
            ]
        }


# --------------------------------------------------------------------------
# parsing


def _int_vector(obj, length, what, idx):
    if not isinstance(obj, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in obj
    ):
        raise ModelError(f"{what} must be a list of integers", idx)
    if len(obj) != length:
        raise ModelError(f"dimension mismatch: {what} has length {len(obj)}, expected {length}", idx)
    return tuple(obj)


def _parse_rate(obj, l, m, idx, signed=False) -> RateFunction:
    if not isinstance(obj, dict) or not isinstance(obj.get("monomials"), list):
        raise ModelError("rate must be an object with a 'monomials' list", idx)
    monos = []
    for mono in obj["monomials"]:
        if not isinstance(mono, dict) or "k" not in mono or "x_exp" not in mono:
            raise ModelError("monomial needs 'k' and 'x_exp'", idx)
        k = mono["k"]
        if not isinstance(k, (int, float)) or isinstance(k, bool) or not math.isfinite(k):
            raise ModelError("monomial coefficient must be a finite number", idx)
        if k < 0 and not signed:
            raise ModelError("negative coefficient", idx)
        x_exp = _int_vector(mono["x_exp"], l, "x_exp", idx)
        y_exp = _int_vector(mono.get("y_exp", [0] * m), m, "y_exp", idx)
        if any(e < 0 for e in x_exp + y_exp):
            raise ModelError("negative exponent", idx)
        monos.append(Monomial(float(k), x_exp, y_exp))
    return RateFunction(tuple(monos))


def network_from_json(doc: dict, strict: bool = True) -> MultiScaleNetwork:
    """Build a network from a decoded document.

    With ``strict=False`` the conservation law is not enforced so that
    ``check_conservation`` can report on the offending reactions.
    """
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    for key in ("slow_dim", "fast_dim", "conservation_M", "reactions"):
        if key not in doc:
            raise ModelError(f"missing field '{key}'")
    l, m, M = doc["slow_dim"], doc["fast_dim"], doc["conservation_M"]
    for name, val, lo in (("slow_dim", l, 1), ("fast_dim", m, 1), ("conservation_M", M, 0)):
        if not isinstance(val, int) or isinstance(val, bool) or val < lo:
            raise ModelError(f"'{name}' must be an integer >= {lo}")
    if not isinstance(doc["reactions"], list) or not doc["reactions"]:
        raise ModelError("at least one reaction is required")
    reactions = []
    for idx, rx in enumerate(doc["reactions"]):
        if not isinstance(rx, dict):
            raise ModelError("reaction must be an object", idx)
        for key in ("gamma_x", "gamma_y", "rate"):
            if key not in rx:
                raise ModelError(f"missing field '{key}'", idx)
        gx = _int_vector(rx["gamma_x"], l, "gamma_x", idx)
        gy = _int_vector(rx["gamma_y"], m, "gamma_y", idx)
        rate = _parse_rate(rx["rate"], l, m, idx)
        try:
            kind = classify(gx, gy)
        except ModelError as exc:
            raise ModelError(str(exc), idx) from None
        if strict and kind in (2, 3) and sum(gy) != 0:
            raise ModelError("conservation violated: gamma_y must sum to zero", idx)
        reactions.append(Reaction(gx, gy, rate))
    return MultiScaleNetwork(l, m, M, tuple(reactions))


def parse_model(text: str, strict: bool = True) -> MultiScaleNetwork:
    """Parse and validate a JSON model document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from None
    return network_from_json(doc, strict=strict)


def controls_from_json(doc: dict) -> ControlHamiltonian:
    if not isinstance(doc, dict) or not isinstance(doc.get("controls"), list):
        raise ModelError("control document needs a 'controls' list")
    if not doc["controls"]:
        raise ModelError("at least one control is required")
    first = doc["controls"][0]
    if not isinstance(first, dict) or not isinstance(first.get("drift"), list) or not first["drift"]:
        raise ModelError("control 0: 'drift' must be a non-empty list")
    l = len(first["drift"])
    controls = []
    for idx, c in enumerate(doc["controls"]):
        if not isinstance(c, dict):
            raise ModelError(f"control {idx}: must be an object")
        for key in ("drift", "cost"):
            if key not in c:
                raise ModelError(f"control {idx}: missing field '{key}'")
        if not isinstance(c["drift"], list) or len(c["drift"]) != l:
            raise ModelError(f"control {idx}: drift must have {l} components")
        try:
            drift = tuple(_parse_rate(d, l, 0, None, signed=True) for d in c["drift"])
            cost = _parse_rate(c["cost"], l, 0, None)
        except ModelError as exc:
            raise ModelError(f"control {idx}: {exc}") from None
        controls.append(Control(str(c.get("label", str(idx))), drift, cost))
    return ControlHamiltonian(tuple(controls))


def parse_controls(text: str) -> ControlHamiltonian:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from None
    return controls_from_json(doc)


def load_any(text: str, strict: bool = True) -> MultiScaleNetwork | ControlHamiltonian:
    """Parse either document kind, dispatching on the top-level keys."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from None
    if isinstance(doc, dict) and "controls" in doc:
        return controls_from_json(doc)
    return network_from_json(doc, strict=strict)


# --------------------------------------------------------------------------
# builders


def constant(k: float, l: int, m: int = 0) -> RateFunction:
    return RateFunction((Monomial(float(k), (0,) * l, (0,) * m),))


def builtin_michaelis_menten(k0, k1, k2, k3, M=1) -> MultiScaleNetwork:
    """Enzyme kinetics with substrate inflow.

    Slow species are substrate and product, fast species are free enzyme and
    enzyme-substrate complex.
    """
    ks = (k0, k1, k2, k3)
    if any(k < 0 for k in ks):
        raise ModelError("negative coefficient")
    if M < 1:
        raise ModelError("conservation_M must be >= 1")
    mono = lambda k, xe, ye: RateFunction((Monomial(float(k), xe, ye),))
    reactions = (
        Reaction((1, 0), (0, 0), mono(k0, (0, 0), (0, 0))),
        Reaction((-1, 0), (-1, 1), mono(k1, (1, 0), (1, 0))),
        Reaction((1, 0), (1, -1), mono(k2, (0, 0), (0, 1))),
        Reaction((0, 1), (1, -1), mono(k3, (0, 0), (0, 1))),
    )
    return MultiScaleNetwork(2, 2, int(M), reactions)


def eikonal_controls(l: int = 2, cost: float = 1.0) -> ControlHamiltonian:
    """Unit-speed controls ``a = +-e_i`` with drift ``f(x, a) = -a`` and constant cost."""
    controls = []
    for i in range(l):
        for sign, tag in ((1.0, "+"), (-1.0, "-")):
            drift = tuple(constant(-sign if j == i else 0.0, l) for j in range(l))
            controls.append(Control(f"{tag}e{i + 1}", drift, constant(cost, l)))
    return ControlHamiltonian(tuple(controls))


def quadratic_controls(a_max: float = 3.0, n: int = 601) -> ControlHamiltonian:
    """1-D controls whose finite max approximates ``H(p) = p^2 / 2`` on ``|p| <= a_max``."""
    controls = []
    for a in np.linspace(-a_max, a_max, n):
        a = float(a)
        controls.append(Control(f"a={a:.6g}", (constant(-a, 1),), constant(0.5 * a * a, 1)))
    return ControlHamiltonian(tuple(controls))


# --------------------------------------------------------------------------
# structural checks


def check_conservation(net: MultiScaleNetwork) -> dict:
    violations = [
        {"reaction": i, "sum_gamma_y": int(sum(r.gamma_y))}
        for i, r in enumerate(net.reactions)
        if r.kind in (2, 3) and sum(r.gamma_y) != 0
    ]
    return {"pass": not violations, "violations": violations}


def enumerate_fast_states(m: int, M: int, cap: int = 100_000) -> FastStateSpace:
    """All ``n`` in N^m with ``sum(n) == M`` in lexicographic order."""
    if m < 1 or M < 0:
        raise ValueError("need m >= 1 and M >= 0")
    size = math.comb(M + m - 1, m - 1)
    if size > cap:
        raise CapacityError(f"|F_M| = {size} exceeds cap {cap}")
    states = []
    # stars and bars: bar positions in increasing order give lexicographic
    # order reversed, so sort afterwards
    for bars in combinations(range(M + m - 1), m - 1):
        prev = -1
        n = []
        for b in bars:
            n.append(b - prev - 1)
            prev = b
        n.append(M + m - 2 - prev)
        states.append(tuple(n))
    states.sort()
    return FastStateSpace(tuple(states), {s: i for i, s in enumerate(states)})


def fast_generator_graph(net: MultiScaleNetwork, x, fss: FastStateSpace) -> np.ndarray:
    """Matrix ``R_x[y1, y2]`` of aggregated class-2/3 rates from y1 to y2."""
    n = len(fss)
    R = np.zeros((n, n))
    for r in net.reactions:
        if r.kind == 1:
            continue
        for i, y in enumerate(fss.states):
            target = tuple(a + b for a, b in zip(y, r.gamma_y))
            j = fss.index.get(target)
            if j is None:
                continue
            R[i, j] += r.rate(x, y)
    return R


def strongly_connected_components(adj: np.ndarray) -> list[list[int]]:
    n, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
    comps = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(n)]
    return sorted(comps)


def check_irreducibility(net: MultiScaleNetwork, x, fss: FastStateSpace) -> dict:
    R = fast_generator_graph(net, x, fss)
    comps = strongly_connected_components(R > 0)
    return {
        "pass": len(comps) == 1,
        "x": [float(v) for v in x],
        "components": [[list(fss.states[i]) for i in c] for c in comps],
        "violations": [] if len(comps) == 1 else [{"x": [float(v) for v in x], "n_components": len(comps)}],
    }


def check_product_form(net: MultiScaleNetwork) -> dict:
    """Boundary surrogate: a negative slow jump in coordinate i needs x_i in every monomial.

    Monotonicity of the factors is not decidable from monomial data and is
    left as a manual obligation.
    """
    rows, violations = [], []
    for idx, r in enumerate(net.reactions):
        bad = [
            i
            for i, g in enumerate(r.gamma_x)
            if g < 0 and any(mono.x_exp[i] < 1 for mono in r.rate.monomials if mono.k != 0.0)
        ]
        rows.append(
            {
                "reaction": idx,
                "pass": not bad,
                "single_monomial": len(r.rate.monomials) == 1,
            }
        )
        if bad:
            violations.append({"reaction": idx, "slow_indices": bad})
    return {"pass": not violations, "reactions": rows, "violations": violations}
