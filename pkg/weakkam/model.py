"""Discounted Tonelli Hamiltonians and their Lagrangian duals.

Points ``x`` and covectors/velocities ``p``/``v`` are arrays whose last axis
has length ``dim``; every map here broadcasts over the leading axes. The
configuration space is the flat unit torus, period 1 on every axis.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConvexityViolation, MaximizerOnBoundary
from .utils import golden_section

logger = logging.getLogger("weakkam.model")

ArrayMap = Callable[[np.ndarray, np.ndarray], np.ndarray]

P_GRID = 64
TOL_P = 1e-8
H_FD = 1e-5


def _fd_gradient(func: ArrayMap, x, p, wrt: str, h: float) -> np.ndarray:
    """Central differences of ``func`` with respect to ``x`` or ``p``."""
    base = x if wrt == "x" else p
    dim = base.shape[-1]
    out = np.empty(np.broadcast_shapes(x.shape, p.shape))
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        if wrt == "x":
            fp, fm = func(x + e, p), func(x - e, p)
        else:
            fp, fm = func(x, p + e), func(x, p - e)
        out[..., k] = (fp - fm) / (2.0 * h)
    return out


@dataclass(frozen=True)
class DiscountedHamiltonian:
    """Hamiltonian H(x, p) with discount rate ``lam``.

    Derivative hints are optional; missing ones fall back to central
    differences with step ``h_fd``. ``l_eval`` is an optional closed-form
    Lagrangian, otherwise the Legendre transform is computed numerically.
    """

    dim: int
    lam: float
    h_eval: ArrayMap
    h_p: Optional[ArrayMap] = None
    h_x: Optional[ArrayMap] = None
    h_pp: Optional[ArrayMap] = None
    h_xx: Optional[ArrayMap] = None
    h_xp: Optional[ArrayMap] = None
    l_eval: Optional[ArrayMap] = None
    l_v: Optional[ArrayMap] = None
    p_bound: float = 8.0
    v_bound: float = 8.0
    h_fd: float = H_FD
    name: str = "custom"
    potential: Optional["FourierPotential"] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.lam > 0:
            raise ValueError(f"discount rate must be positive, got {self.lam}")
        if self.p_bound <= 0 or self.v_bound <= 0:
            raise ValueError("p_bound and v_bound must be positive")

    def __call__(self, x, p) -> np.ndarray:
        return self.h_eval(np.asarray(x, dtype=float), np.asarray(p, dtype=float))

    def dh_dp(self, x, p, analytic: bool = True) -> np.ndarray:
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        if analytic and self.h_p is not None:
            return np.broadcast_to(self.h_p(x, p), np.broadcast_shapes(x.shape, p.shape))
        return _fd_gradient(self.h_eval, x, p, "p", self.h_fd)

    def dh_dx(self, x, p, analytic: bool = True) -> np.ndarray:
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        if analytic and self.h_x is not None:
            return np.broadcast_to(self.h_x(x, p), np.broadcast_shapes(x.shape, p.shape))
        return _fd_gradient(self.h_eval, x, p, "x", self.h_fd)

    def second_derivatives(self, x, p) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (H_xx, H_xp, H_pp) with shape (..., dim, dim).

        ``H_xp[..., i, j]`` is the derivative of ``H_p[j]`` along ``x[i]``.
        """
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        if None not in (self.h_xx, self.h_xp, self.h_pp):
            return self.h_xx(x, p), self.h_xp(x, p), self.h_pp(x, p)
        dim, h = self.dim, self.h_fd
        shape = np.broadcast_shapes(x.shape, p.shape)[:-1] + (dim, dim)
        hxx, hxp, hpp = np.empty(shape), np.empty(shape), np.empty(shape)
        for i in range(dim):
            e = np.zeros(dim)
            e[i] = h
            hxx[..., i, :] = (self.dh_dx(x + e, p) - self.dh_dx(x - e, p)) / (2 * h)
            hxp[..., i, :] = (self.dh_dp(x + e, p) - self.dh_dp(x - e, p)) / (2 * h)
            hpp[..., i, :] = (self.dh_dp(x, p + e) - self.dh_dp(x, p - e)) / (2 * h)
        return hxx, hxp, hpp

    def lagrangian(self, mode: Optional[str] = None) -> "LagrangianView":
        """Dual Lagrangian, closed form when available."""
        if mode is None:
            mode = "analytic" if self.l_eval is not None else "numeric-legendre"
        return LagrangianView(source=self, l_mode=mode, v_bound=self.v_bound)

    def perturbed(
        self, extra: Callable[[np.ndarray], np.ndarray], name: str = None
    ) -> "DiscountedHamiltonian":
        """Return H(x, p) + extra(x); the Lagrangian shifts by -extra(x).

        Analytic x-derivatives are dropped since ``extra`` is usually only
        known on a grid.
        """
        h_eval, l_eval = self.h_eval, self.l_eval

        def h_new(x, p):
            return h_eval(x, p) + extra(x)

        l_new = None
        if l_eval is not None:

            def l_new(x, v):
                return l_eval(x, v) - extra(x)

        return replace(
            self,
            h_eval=h_new,
            l_eval=l_new,
            h_x=None,
            h_xx=None,
            h_xp=None,
            name=name or f"{self.name}+perturbation",
        )


@dataclass(frozen=True)
class LagrangianView:
    """Lagrangian L(x, v) dual to ``source``."""

    source: DiscountedHamiltonian
    l_mode: str = "analytic"
    v_bound: float = 8.0
    tol_p: float = TOL_P

    def __post_init__(self):
        if self.l_mode not in ("analytic", "numeric-legendre"):
            raise ValueError(f"unknown Lagrangian mode {self.l_mode!r}")
        if self.l_mode == "analytic" and self.source.l_eval is None:
            raise ValueError("model has no closed-form Lagrangian")

    def __call__(self, x, v) -> np.ndarray:
        x, v = np.asarray(x, dtype=float), np.asarray(v, dtype=float)
        if self.l_mode == "analytic":
            return self.source.l_eval(x, v)
        value, _ = legendre_transform(self.source, x, v, tol_p=self.tol_p)
        return value

    def legendre_map(self, x, v) -> np.ndarray:
        """Covector p = L_v(x, v) dual to the velocity ``v``."""
        x, v = np.asarray(x, dtype=float), np.asarray(v, dtype=float)
        if self.l_mode == "analytic" and self.source.l_v is not None:
            return np.broadcast_to(self.source.l_v(x, v), np.broadcast_shapes(x.shape, v.shape))
        _, p_star = legendre_transform(self.source, x, v, tol_p=self.tol_p)
        return p_star


def legendre_transform(
    H: DiscountedHamiltonian,
    x,
    v,
    n_grid: int = P_GRID,
    tol_p: float = TOL_P,
    sweeps: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """Numeric Legendre transform L(x, v) = max_p <p, v> - H(x, p).

    The maximizer is bracketed on a coarse grid of ``n_grid`` points per axis
    over [-p_bound, p_bound] and refined by golden section, one axis at a
    time.

    Returns
    -------
    (L(x, v), p*) broadcast over the leading axes of ``x`` and ``v``
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(np.linalg.norm(v, axis=-1) > H.v_bound * (1 + 1e-12)):
        raise ValueError("velocity outside the Lagrangian search radius v_bound")
    shape = np.broadcast_shapes(x.shape, v.shape)
    x = np.broadcast_to(x, shape).reshape(-1, H.dim)
    v = np.broadcast_to(v, shape).reshape(-1, H.dim)
    dim, bound = H.dim, H.p_bound

    axis = np.linspace(-bound, bound, n_grid)
    step = axis[1] - axis[0]
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    # objective to minimize: H(x, p) - <p, v>
    coarse = H(x[:, None, :], mesh[None, :, :]) - np.einsum("kd,md->km", v, mesh)
    best = mesh[np.argmin(coarse, axis=1)]

    for _ in range(sweeps if dim > 1 else 1):
        for k in range(dim):
            lo = np.clip(best[:, k] - step, -bound, bound)
            hi = np.clip(best[:, k] + step, -bound, bound)

            def objective(s, k=k):
                p = best.copy()
                p[:, k] = s
                return H(x, p) - np.sum(p * v, axis=-1)

            best[:, k], _ = golden_section(objective, lo, hi, tol_p)

    value = np.sum(best * v, axis=-1) - H(x, best)
    on_edge = np.any(np.abs(best) >= bound - 10 * tol_p, axis=-1)
    if np.any(on_edge):
        raise MaximizerOnBoundary(
            f"Legendre maximizer hits the p_bound={bound} box", p_star=best[on_edge]
        )
    return value.reshape(shape[:-1]), best.reshape(shape)


def hamiltonian_vector_field(
    H: DiscountedHamiltonian, state, analytic: bool = True
) -> np.ndarray:
    """Discounted Hamiltonian field (H_p, -H_x - lam p) at ``state`` = (x, p)."""
    state = np.asarray(state, dtype=float)
    x, p = state[..., : H.dim], state[..., H.dim:]
    dx = H.dh_dp(x, p, analytic=analytic)
    dp = -H.dh_dx(x, p, analytic=analytic) - H.lam * p
    return np.concatenate([dx, dp], axis=-1)


def vector_field_jacobian(H: DiscountedHamiltonian, state) -> np.ndarray:
    """Jacobian of the discounted field, shape (..., 2 dim, 2 dim)."""
    state = np.asarray(state, dtype=float)
    d = H.dim
    x, p = state[..., :d], state[..., d:]
    hxx, hxp, hpp = H.second_derivatives(x, p)
    jac = np.zeros(state.shape[:-1] + (2 * d, 2 * d))
    jac[..., :d, :d] = np.swapaxes(hxp, -1, -2)
    jac[..., :d, d:] = hpp
    jac[..., d:, :d] = -hxx
    jac[..., d:, d:] = -hxp - H.lam * np.eye(d)
    return jac


@dataclass
class ConvexityReport:
    min_second_difference: float
    radii: List[float]
    min_secant_slopes: List[float]
    violations: List[dict]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {
            "min_second_difference": self.min_second_difference,
            "radii": self.radii,
            "min_secant_slopes": self.min_secant_slopes,
            "violations": self.violations,
        }


def convexity_report(
    H: DiscountedHamiltonian,
    n_samples: int,
    seed: int = 0,
    n_radii: int = 8,
    step: float = None,
    raise_on_violation: bool = True,
) -> ConvexityReport:
    """Discrete checks of fiber convexity and superlinearity.

    Convexity: second differences of p -> H(x, p) along random unit
    directions must be strictly positive. Superlinearity: the secant slope
    (H(x, r e) - H(x, 0)) / r must increase with r.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    d, bound = H.dim, H.p_bound
    step = step or 1e-2 * bound

    x = rng.random((n_samples, d))
    e = rng.normal(size=(n_samples, d))
    e /= np.linalg.norm(e, axis=-1, keepdims=True)
    r = rng.random((n_samples, 1)) * (bound - step)
    p = r * rng.choice([-1.0, 1.0], size=(n_samples, 1)) * e

    quotient = (H(x, p + step * e) + H(x, p - step * e) - 2 * H(x, p)) / step ** 2
    violations = [
        {"kind": "convexity", "x": x[i].tolist(), "p": p[i].tolist(), "value": float(quotient[i])}
        for i in np.flatnonzero(~(quotient > 0))
    ]

    radii = bound * np.arange(1, n_radii + 1) / n_radii
    h0 = H(x, np.zeros_like(x))
    slopes = np.stack([(H(x, rad * e) - h0) / rad for rad in radii], axis=1)
    bad = np.flatnonzero(np.any(np.diff(slopes, axis=1) <= 0, axis=1))
    violations += [
        {"kind": "superlinearity", "x": x[i].tolist(), "direction": e[i].tolist(),
         "slopes": slopes[i].tolist()}
        for i in bad
    ]

    report = ConvexityReport(
        min_second_difference=float(np.min(quotient)),
        radii=radii.tolist(),
        min_secant_slopes=np.min(slopes, axis=0).tolist(),
        violations=violations,
    )
    logger.debug(
        "Convexity of %s: min second difference %.6g, %d violations",
        H.name, report.min_second_difference, len(violations),
    )
    if violations and raise_on_violation:
        raise ConvexityViolation(
            f"{len(violations)} sampled fibers violate convexity or superlinearity",
            report=report,
        )
    return report


@dataclass(frozen=True)
class FourierPotential:
    """V(x) = constant + sum_j a_j cos(2 pi <k_j, x> + phi_j)."""

    dim: int = 1
    constant: float = 0.0
    modes: Tuple[Tuple[float, Tuple[float, ...], float], ...] = ()

    def _parts(self):
        for amplitude, wave, phase in self.modes:
            k = np.asarray(wave, dtype=float).reshape(self.dim)
            yield float(amplitude), 2 * np.pi * k, float(phase)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], self.constant, dtype=float)
        for a, k, phi in self._parts():
            out = out + a * np.cos(x @ k + phi)
        return out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a, k, phi in self._parts():
            out = out - a * np.sin(x @ k + phi)[..., None] * k
        return out

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.dim,))
        for a, k, phi in self._parts():
            out = out - a * np.cos(x @ k + phi)[..., None, None] * np.outer(k, k)
        return out

    def max_gradient(self) -> float:
        """Upper bound of |V'| over the torus."""
        return float(sum(abs(a) * np.linalg.norm(k) for a, k, _ in self._parts()))

    def max_value(self) -> float:
        return self.constant + float(sum(abs(a) for a, _, _ in self._parts()))


@dataclass(frozen=True)
class MechanicalPreset:
    """H(x, p) = |p - shift|^2 / 2 + V(x), L(x, v) = |v|^2 / 2 + <shift, v> - V(x)."""

    potential: FourierPotential
    shift: Tuple[float, ...] = ()
    name: str = "mechanical"

    def default_bound(self) -> float:
        c = np.linalg.norm(self.shift) if self.shift else 0.0
        return 4.0 + 2.0 * self.potential.max_gradient() + float(c)

    def build(
        self, lam: float, p_bound: float = None, v_bound: float = None, h_fd: float = H_FD
    ) -> DiscountedHamiltonian:
        V = self.potential
        d = V.dim
        c = np.asarray(self.shift if self.shift else (0.0,) * d, dtype=float).reshape(d)
        eye = np.eye(d)

        def h_eval(x, p):
            return 0.5 * np.sum((p - c) ** 2, axis=-1) + V(x)

        def h_p(x, p):
            return p - c + 0.0 * x

        def h_x(x, p):
            return V.gradient(x) + 0.0 * p

        def h_pp(x, p):
            return np.broadcast_to(eye, np.broadcast_shapes(x.shape, p.shape) + (d,))

        def h_xx(x, p):
            shape = np.broadcast_shapes(x.shape, p.shape)
            return np.broadcast_to(V.hessian(x), shape + (d,))

        def h_xp(x, p):
            return np.zeros(np.broadcast_shapes(x.shape, p.shape) + (d,))

        def l_eval(x, v):
            return 0.5 * np.sum(v ** 2, axis=-1) + v @ c - V(x)

        def l_v(x, v):
            return v + c + 0.0 * x

        bound = self.default_bound()
        return DiscountedHamiltonian(
            dim=d,
            lam=float(lam),
            h_eval=h_eval,
            h_p=h_p,
            h_x=h_x,
            h_pp=h_pp,
            h_xx=h_xx,
            h_xp=h_xp,
            l_eval=l_eval,
            l_v=l_v,
            p_bound=float(p_bound or bound),
            v_bound=float(v_bound or bound),
            h_fd=h_fd,
            name=self.name,
            potential=V,
        )


def _modes(rows: Sequence[Sequence]) -> Tuple:
    return tuple((float(a), tuple(float(k) for k in np.atleast_1d(w)), float(phi)) for a, w, phi in rows)


def make_preset(name: str, params: dict = None) -> MechanicalPreset:
    """Named preset with optional parameter overrides.

    ``params`` keys: ``amplitude``, ``wave_number``, ``constant``, ``shift``
    and ``modes`` (list of [amplitude, wave vector, phase]).
    """
    params = dict(params or {})
    amplitude = float(params.get("amplitude", 1.0))
    constant = float(params.get("constant", 0.0))
    if name == "free":
        potential = FourierPotential(dim=1, constant=0.0)
        shift = ()
    elif name == "constant":
        potential = FourierPotential(dim=1, constant=float(params.get("constant", 1.0)))
        shift = ()
    elif name == "cosine":
        k = float(params.get("wave_number", 1.0))
        potential = FourierPotential(1, constant, _modes([(amplitude, k, 0.0)]))
        shift = ()
    elif name == "two-well":
        k = float(params.get("wave_number", 2.0))
        potential = FourierPotential(1, constant, _modes([(amplitude, k, 0.0)]))
        shift = ()
    elif name == "shifted":
        amplitude = float(params.get("amplitude", 0.0))
        k = float(params.get("wave_number", 1.0))
        modes = _modes([(amplitude, k, 0.0)]) if amplitude else ()
        potential = FourierPotential(1, constant, modes)
        shift = (float(params.get("shift", 0.3)),)
    elif name == "cosine-2d":
        potential = FourierPotential(
            2, constant, _modes([(amplitude, (1.0, 0.0), 0.0), (amplitude, (0.0, 1.0), 0.0)])
        )
        shift = ()
    else:
        raise ValueError(f"Unknown preset {name!r}")

    if "modes" in params:
        potential = FourierPotential(potential.dim, constant, _modes(params["modes"]))
    return MechanicalPreset(potential=potential, shift=shift, name=name)


def build_model(cfg) -> DiscountedHamiltonian:
    """Build the model described by a validated experiment configuration."""
    preset = make_preset(cfg.preset.name, cfg.preset.params)
    model = preset.build(
        cfg["lambda"], p_bound=cfg.preset.p_bound, v_bound=cfg.preset.v_bound
    )
    logger.info(
        "Model %s: dim=%d lambda=%g p_bound=%g v_bound=%g",
        model.name, model.dim, model.lam, model.p_bound, model.v_bound,
    )
    return model
