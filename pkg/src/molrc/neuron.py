"""Izhikevich neuron dynamics.

All functions accept scalars or numpy arrays; arrays are integrated
element-wise so a whole population advances in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLD = 30.0
REST_POTENTIAL = -65.0
DEFAULT_DT = 0.5
DEFAULT_SUBSTEPS = 2


class NonFiniteState(FloatingPointError):
    def __init__(self, message: str, index=None):
        super().__init__(message if index is None else f"{message} (neuron {index})")
        self.index = index


@dataclass(frozen=True, eq=False)
class NeuronParams:
    a: np.ndarray | float
    b: np.ndarray | float
    c: np.ndarray | float
    d: np.ndarray | float

    def __len__(self) -> int:
        return np.size(self.a)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeuronParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in "abcd")

    def __getitem__(self, key) -> "NeuronParams":
        return NeuronParams(*(np.asarray(x)[key] for x in (self.a, self.b, self.c, self.d)))

    @classmethod
    def stack(cls, params: list["NeuronParams"]) -> "NeuronParams":
        return cls(*(np.array([getattr(p, f) for p in params], dtype=float) for f in "abcd"))

    def tile(self, n: int) -> "NeuronParams":
        return NeuronParams(*(np.full(n, float(x)) for x in (self.a, self.b, self.c, self.d)))


REGULAR_SPIKING = NeuronParams(0.02, 0.2, -65.0, 8.0)


@dataclass(frozen=True)
class NeuronState:
    v: np.ndarray | float
    u: np.ndarray | float


def rest_state(params: NeuronParams) -> NeuronState:
    v = np.full(np.shape(params.b), REST_POTENTIAL) if np.ndim(params.b) else REST_POTENTIAL
    return NeuronState(v, np.asarray(params.b) * v if np.ndim(params.b) else params.b * v)


def sample_excitatory(r) -> NeuronParams:
    """Regular-spiking biased excitatory parameters; ``r = 0`` is pure RS."""
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("r must lie in [0, 1]")
    r2 = r * r
    ones = np.ones_like(r)
    return _maybe_scalar(NeuronParams(0.02 * ones, 0.2 * ones, -65.0 + 15.0 * r2, 8.0 - 6.0 * r2))


def sample_inhibitory(r) -> NeuronParams:
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise ValueError("r must lie in [0, 1]")
    ones = np.ones_like(r)
    return _maybe_scalar(NeuronParams(0.02 + 0.08 * r, 0.25 - 0.05 * r, -65.0 * ones, 2.0 * ones))


def _maybe_scalar(p: NeuronParams) -> NeuronParams:
    if np.ndim(p.a) == 0:
        return NeuronParams(float(p.a), float(p.b), float(p.c), float(p.d))
    return p


def advance(v, u, a, b, c, d, current, dt=DEFAULT_DT, substeps=DEFAULT_SUBSTEPS):
    """In-place integration of one tick for arrays ``v`` and ``u``.

    ``v`` is integrated with ``substeps`` Euler steps of ``dt / substeps``,
    ``u`` with one full step. Neurons already at or above threshold on entry
    fire immediately without integration. Returns the boolean fired mask.
    """
    pending = v >= THRESHOLD
    h = dt / substeps
    active = ~pending
    for _ in range(substeps):
        dv = h * (0.04 * v * v + 5.0 * v + 140.0 - u + current)
        # once a neuron crosses threshold within the tick it is held there
        np.add(v, dv, out=v, where=active)
        active &= v < THRESHOLD
    du = dt * a * (b * v - u)
    np.add(u, du, out=u, where=~pending)
    fired = v >= THRESHOLD
    if not (np.isfinite(v).all() and np.isfinite(u).all()):
        bad = np.flatnonzero(~(np.isfinite(v) & np.isfinite(u)))
        raise NonFiniteState("non-finite membrane state", int(bad[0]))
    v[fired] = np.broadcast_to(c, v.shape)[fired]
    u[fired] += np.broadcast_to(d, u.shape)[fired]
    return fired


def step(state: NeuronState, params: NeuronParams, input_current, dt: float = DEFAULT_DT, substeps: int = DEFAULT_SUBSTEPS):
    """Advance one tick; returns ``(new_state, fired)``.

    The returned state is post-reset, so ``v <= 30`` always holds.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    scalar = np.ndim(state.v) == 0
    v = np.array(state.v, dtype=float, ndmin=1)
    u = np.array(state.u, dtype=float, ndmin=1)
    with np.errstate(over="ignore", invalid="ignore"):
        fired = advance(v, u, params.a, params.b, params.c, params.d, np.asarray(input_current, dtype=float), dt, substeps)
    if scalar:
        return NeuronState(float(v[0]), float(u[0])), bool(fired[0])
    return NeuronState(v, u), fired


def reported_potential(state: NeuronState, fired):
    """Membrane potential for display: spikes are shown at the 30 mV peak."""
    return np.where(fired, THRESHOLD, state.v)


def spike_times(params: NeuronParams, current, duration: float, dt: float = DEFAULT_DT, substeps: int = DEFAULT_SUBSTEPS, state: NeuronState | None = None) -> list[float]:
    """Spike times (ms) of a single neuron under a constant current, from rest unless ``state`` is given."""
    state = rest_state(params) if state is None else state
    out = []
    for k in range(int(round(duration / dt))):
        state, fired = step(state, params, current, dt, substeps)
        if fired:
            out.append(k * dt)
    return out
