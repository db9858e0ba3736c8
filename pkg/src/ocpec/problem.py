"""Discretized OCPEC data model.

All evaluators are *stage-batched*: they receive the stacked stage primals
``Z`` of shape ``(N, n_Z)`` with row ``n-1`` holding ``Z_n = (x_n, tau_n, p_n,
w_n)`` and return stacked results whose row ``n-1`` depends on ``Z_n`` only.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


class EvaluatorError(RuntimeError):
    """A problem evaluator raised or produced non-finite output."""

    def __init__(self, message: str, stage: Optional[int] = None, iteration: Optional[int] = None):
        self.stage = stage
        self.iteration = iteration
        where = []
        if stage is not None:
            where.append(f"stage {stage}")
        if iteration is not None:
            where.append(f"iteration {iteration}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


@dataclass(frozen=True)
class Dimensions:
    n_x: int
    n_tau: int
    n_p: int
    n_sigma: int
    n_eta: int
    n_gamma: int
    N: int
    dt: float

    def __post_init__(self):
        for name in ("n_x", "n_tau", "n_p", "n_sigma", "n_eta", "n_gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_w(self) -> int:
        return self.n_p

    @property
    def n_Z(self) -> int:
        return self.n_x + self.n_tau + self.n_p + self.n_w

    @property
    def n_dual(self) -> int:
        return self.n_sigma + self.n_eta + self.n_x + self.n_gamma

    @property
    def n_Y(self) -> int:
        return self.n_dual + self.n_Z


class BoundData:
    """Box ``[l, u]`` of the equilibrium variable; infinite entries allowed."""

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper bounds must be 1-D of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds must not be NaN")
        if np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise ValueError("lower bound cannot be +inf and upper bound cannot be -inf")
        if not np.all(lower < upper):
            raise ValueError("bounds must satisfy l < u componentwise")
        self.lower = lower
        self.upper = upper
        self.lower.setflags(write=False)
        self.upper.setflags(write=False)

    def __len__(self):
        return self.lower.size

    def __repr__(self):
        return f"BoundData(lower={self.lower.tolist()}, upper={self.upper.tolist()})"

    @property
    def has_lower(self) -> Array:
        return np.isfinite(self.lower)

    @property
    def has_upper(self) -> Array:
        return np.isfinite(self.upper)

    def rows_per_component(self) -> Array:
        both = self.has_lower & self.has_upper
        one = self.has_lower ^ self.has_upper
        return np.where(both, 4, np.where(one, 3, 0))

    @property
    def n_gamma(self) -> int:
        return int(self.rows_per_component().sum())


def _check_pw(p, w, bounds: BoundData):
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    if p.shape != w.shape or p.shape[-1:] != (len(bounds),):
        raise ValueError(
            f"p {p.shape} and w {w.shape} must share a trailing dimension of {len(bounds)}"
        )
    return p, w


def build_scholtes_phi(p, w, s: float, bounds: BoundData) -> Array:
    """Relaxed equilibrium constraints ``Phi(p, w, s) >= 0``.

    Per component ``i`` (ascending) the emitted rows are

    * both bounds finite: ``p-l, u-p, s-(p-l)w, s+(u-p)w``
    * only ``l`` finite:  ``p-l, w, s-(p-l)w``
    * only ``u`` finite:  ``u-p, -w, s+(u-p)w``
    * no finite bound:    nothing

    ``p`` and ``w`` may carry leading batch dimensions.
    """
    if s < 0:
        raise ValueError("perturbation s must be nonnegative")
    p, w = _check_pw(p, w, bounds)
    rows = []
    for i in range(len(bounds)):
        lo, up = bounds.lower[i], bounds.upper[i]
        pi, wi = p[..., i], w[..., i]
        if np.isfinite(lo) and np.isfinite(up):
            rows += [pi - lo, up - pi, s - (pi - lo) * wi, s + (up - pi) * wi]
        elif np.isfinite(lo):
            rows += [pi - lo, wi, s - (pi - lo) * wi]
        elif np.isfinite(up):
            rows += [up - pi, -wi, s + (up - pi) * wi]
    if not rows:
        return np.zeros(p.shape[:-1] + (0,))
    return np.stack(rows, axis=-1)


def build_scholtes_jacobian(p, w, bounds: BoundData) -> Array:
    """Jacobian of :func:`build_scholtes_phi` w.r.t. ``(p, w)``; independent of ``s``.

    Shape ``(..., n_gamma, 2 n_p)``, columns ordered ``p`` then ``w``.
    """
    p, w = _check_pw(p, w, bounds)
    n_p = len(bounds)
    jac = np.zeros(p.shape[:-1] + (bounds.n_gamma, 2 * n_p))
    r = 0
    for i in range(n_p):
        lo, up = bounds.lower[i], bounds.upper[i]
        pi, wi = p[..., i], w[..., i]
        ip, iw = i, n_p + i
        if np.isfinite(lo) and np.isfinite(up):
            jac[..., r, ip] = 1.0
            jac[..., r + 1, ip] = -1.0
            jac[..., r + 2, ip] = -wi
            jac[..., r + 2, iw] = -(pi - lo)
            jac[..., r + 3, ip] = -wi
            jac[..., r + 3, iw] = up - pi
            r += 4
        elif np.isfinite(lo):
            jac[..., r, ip] = 1.0
            jac[..., r + 1, iw] = 1.0
            jac[..., r + 2, ip] = -wi
            jac[..., r + 2, iw] = -(pi - lo)
            r += 3
        elif np.isfinite(up):
            jac[..., r, ip] = -1.0
            jac[..., r + 1, iw] = -1.0
            jac[..., r + 2, ip] = -wi
            jac[..., r + 2, iw] = up - pi
            r += 3
    return jac


def scholtes_cross_weights(gamma: Array, bounds: BoundData) -> Array:
    """``sum_r gamma_r`` over the bilinear rows of each component.

    Every bilinear row has ``d2/dp_i dw_i = -1``, so the Hessian of
    ``-gamma^T Phi`` carries this weight in its ``(p_i, w_i)`` entries.
    """
    gamma = np.asarray(gamma, dtype=float)
    out = np.zeros(gamma.shape[:-1] + (len(bounds),))
    r = 0
    for i in range(len(bounds)):
        lo_fin, up_fin = np.isfinite(bounds.lower[i]), np.isfinite(bounds.upper[i])
        if lo_fin and up_fin:
            out[..., i] = gamma[..., r + 2] + gamma[..., r + 3]
            r += 4
        elif lo_fin or up_fin:
            out[..., i] = gamma[..., r + 2]
            r += 3
    return out


@dataclass(frozen=True)
class StageMap:
    """Stage-batched vector function of ``Z`` with its Jacobian."""

    value: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]


@dataclass(frozen=True)
class StageCost:
    """Stage-batched scalar cost ``L_n(Z_n)`` with gradient and Hessian."""

    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    hessian: Callable[[Array], Array]


@dataclass(frozen=True)
class DiscretizedOCPEC:
    """The stage-wise NLP solved by the continuation method.

    ``dyn`` evaluates ``F_n = f(x_n, tau_n, p_n) dt - x_n`` so the dynamics
    defect is ``x_{n-1} + F_n``.  ``constraint_hessian(Z, sigma, eta, lam)``
    returns the Hessian of ``-sigma^T G + eta^T C + lam^T F``; the cost and
    relaxed-equilibrium parts are added by :meth:`hamiltonian_hessian`.
    ``vi_map`` optionally evaluates the VI function ``K`` for solution metrics.
    """

    dims: Dimensions
    bounds: BoundData
    x0: Array
    cost: StageCost
    ineq: StageMap
    eq: StageMap
    dyn: StageMap
    constraint_hessian: Callable[[Array, Array, Array, Array], Array]
    vi_map: Optional[Callable[[Array], Array]] = None
    name: str = "ocpec"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = self.dims
        if len(self.bounds) != d.n_p:
            raise ValueError(f"bounds have {len(self.bounds)} components, n_p is {d.n_p}")
        if self.bounds.n_gamma != d.n_gamma:
            raise ValueError(f"bounds imply n_gamma={self.bounds.n_gamma}, dims say {d.n_gamma}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.size != d.n_x:
            raise ValueError(f"x0 has length {x0.size}, expected n_x={d.n_x}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    # slices into a stage primal vector Z_n
    @property
    def z_slices(self):
        d = self.dims
        a = d.n_x
        b = a + d.n_tau
        c = b + d.n_p
        return slice(0, a), slice(a, b), slice(b, c), slice(c, c + d.n_w)

    def split(self, Z: Array):
        sx, st, sp, sw = self.z_slices
        return Z[..., sx], Z[..., st], Z[..., sp], Z[..., sw]

    def phi(self, Z: Array, s: float) -> Array:
        _, _, p, w = self.split(Z)
        return build_scholtes_phi(p, w, s, self.bounds)

    def phi_jacobian(self, Z: Array) -> Array:
        """Jacobian of ``Phi`` w.r.t. the full ``Z_n``, shape ``(N, n_gamma, n_Z)``."""
        _, _, p, w = self.split(Z)
        d = self.dims
        jac = np.zeros(Z.shape[:-1] + (d.n_gamma, d.n_Z))
        jac[..., d.n_x + d.n_tau:] = build_scholtes_jacobian(p, w, self.bounds)
        return jac

    def hamiltonian_hessian(self, Z, sigma, eta, lam, gamma) -> Array:
        """``nabla_ZZ H_n`` for every stage, shape ``(N, n_Z, n_Z)``."""
        d = self.dims
        hess = self.cost.hessian(Z) + self.constraint_hessian(Z, sigma, eta, lam)
        if d.n_p:
            cross = scholtes_cross_weights(gamma, self.bounds)
            ip = d.n_x + d.n_tau + np.arange(d.n_p)
            iw = ip + d.n_p
            hess = np.array(hess, copy=True)
            hess[:, ip, iw] += cross
            hess[:, iw, ip] += cross
        return hess

    def vi_values(self, Z: Array) -> Array:
        if self.vi_map is None:
            return self.split(Z)[3]
        return self.vi_map(Z)

    def with_cost(self, cost: StageCost, name: Optional[str] = None) -> "DiscretizedOCPEC":
        return replace(self, cost=cost, name=name or self.name)


# ---------------------------------------------------------------------------
# building a discretized problem from continuous-time pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageFunction:
    """Continuous-time piece ``g(v, t)`` with ``v = (x, tau, p)`` stacked per stage.

    ``value(v, t) -> (N, m)``, ``jacobian(v, t) -> (N, m, k)`` and
    ``hessian(v, t, mult) -> (N, k, k)`` returning ``sum_i mult_i d2 g_i``.
    ``hessian`` may be ``None`` for maps that are affine in ``v``.
    """

    value: Callable[[Array, Array], Array]
    jacobian: Callable[[Array, Array], Array]
    hessian: Optional[Callable[[Array, Array, Array], Array]] = None
    size: int = 0


def _empty_piece(m: int = 0) -> StageFunction:
    return StageFunction(
        value=lambda v, t: np.zeros((v.shape[0], m)),
        jacobian=lambda v, t: np.zeros((v.shape[0], m, v.shape[1])),
        hessian=None,
        size=m,
    )


def _piece_hessian(piece: StageFunction, v, t, mult) -> Optional[Array]:
    if piece.hessian is None or piece.size == 0:
        return None
    return piece.hessian(v, t, mult)


def make_discretized(
    f: StageFunction,
    K: StageFunction,
    stage_cost: StageFunction,
    terminal_cost: Optional[StageFunction],
    G: Optional[StageFunction],
    C: Optional[StageFunction],
    bounds: BoundData,
    N: int,
    dt: float,
    x0,
    n_tau: int,
    name: str = "ocpec",
) -> DiscretizedOCPEC:
    """Implicit-Euler discretization of a DVI-constrained optimal control problem.

    ``stage_cost`` and ``terminal_cost`` are scalar pieces (``size == 1``);
    the stage cost is scaled by ``dt`` and the terminal cost is added to the
    last stage.  ``C`` is augmented with ``w - K`` so that ``n_eta`` counts
    both.  Stage ``n`` is evaluated at time ``t_n = n dt``.
    """
    if N < 1 or not dt > 0:
        raise ValueError("need N >= 1 and dt > 0")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n_x = x0.size
    n_p = len(bounds)
    if f.size != n_x:
        raise ValueError(f"f has size {f.size}, expected n_x={n_x}")
    if K.size != n_p:
        raise ValueError(f"K has size {K.size}, expected n_p={n_p}")
    if stage_cost.size != 1 or (terminal_cost is not None and terminal_cost.size != 1):
        raise ValueError("cost pieces must be scalar (size 1)")
    G = G if G is not None else _empty_piece()
    C = C if C is not None else _empty_piece()
    k = n_x + n_tau + n_p
    dims = Dimensions(
        n_x=n_x, n_tau=n_tau, n_p=n_p, n_sigma=G.size, n_eta=C.size + n_p,
        n_gamma=bounds.n_gamma, N=N, dt=float(dt),
    )
    t = dt * np.arange(1, N + 1)
    last = np.zeros(N, dtype=bool)
    last[-1] = True
    n_c = C.size
    eye_x = np.eye(n_x)

    def _v(Z):
        return Z[:, :k]

    def _w(Z):
        return Z[:, k:]

    def cost_value(Z):
        v = _v(Z)
        val = dt * stage_cost.value(v, t)[:, 0]
        if terminal_cost is not None:
            val = val + np.where(last, terminal_cost.value(v, t)[:, 0], 0.0)
        return val

    def cost_gradient(Z):
        v = _v(Z)
        g = np.zeros((Z.shape[0], dims.n_Z))
        g[:, :k] = dt * stage_cost.jacobian(v, t)[:, 0, :]
        if terminal_cost is not None:
            g[-1, :k] += terminal_cost.jacobian(v[-1:], t[-1:])[0, 0, :]
        return g

    def cost_hessian(Z):
        v = _v(Z)
        h = np.zeros((Z.shape[0], dims.n_Z, dims.n_Z))
        hs = _piece_hessian(stage_cost, v, t, np.ones((N, 1)))
        if hs is not None:
            h[:, :k, :k] = dt * hs
        if terminal_cost is not None:
            ht = _piece_hessian(terminal_cost, v[-1:], t[-1:], np.ones((1, 1)))
            if ht is not None:
                h[-1, :k, :k] += ht[0]
        return h

    def ineq_value(Z):
        return G.value(_v(Z), t)

    def ineq_jac(Z):
        jac = np.zeros((Z.shape[0], G.size, dims.n_Z))
        jac[:, :, :k] = G.jacobian(_v(Z), t)
        return jac

    def eq_value(Z):
        v = _v(Z)
        return np.concatenate([C.value(v, t), _w(Z) - K.value(v, t)], axis=1)

    def eq_jac(Z):
        v = _v(Z)
        jac = np.zeros((Z.shape[0], dims.n_eta, dims.n_Z))
        jac[:, :n_c, :k] = C.jacobian(v, t)
        jac[:, n_c:, :k] = -K.jacobian(v, t)
        jac[:, n_c:, k:] = np.eye(n_p)
        return jac

    def dyn_value(Z):
        return dt * f.value(_v(Z), t) - Z[:, :n_x]

    def dyn_jac(Z):
        jac = np.zeros((Z.shape[0], n_x, dims.n_Z))
        jac[:, :, :k] = dt * f.jacobian(_v(Z), t)
        jac[:, :, :n_x] -= eye_x
        return jac

    def constraint_hessian(Z, sigma, eta, lam):
        v = _v(Z)
        h = np.zeros((Z.shape[0], dims.n_Z, dims.n_Z))
        for piece, mult in (
            (G, -sigma),
            (C, eta[:, :n_c]),
            (K, -eta[:, n_c:]),
            (f, dt * lam),
        ):
            hp = _piece_hessian(piece, v, t, mult)
            if hp is not None:
                h[:, :k, :k] += hp
        return h

    def vi_map(Z):
        return K.value(_v(Z), t)

    return DiscretizedOCPEC(
        dims=dims,
        bounds=bounds,
        x0=x0,
        cost=StageCost(cost_value, cost_gradient, cost_hessian),
        ineq=StageMap(ineq_value, ineq_jac),
        eq=StageMap(eq_value, eq_jac),
        dyn=StageMap(dyn_value, dyn_jac),
        constraint_hessian=constraint_hessian,
        vi_map=vi_map,
        name=name,
    )


# ---------------------------------------------------------------------------
# derivative checking
# ---------------------------------------------------------------------------


@dataclass
class DerivativeReport:
    tol: float
    max_error: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)  # (function, stage, row, col, error)

    @property
    def ok(self) -> bool:
        return not self.flagged

    def summary(self) -> str:
        lines = [f"{name:>20s}: max rel. error {err:.3e}" for name, err in self.max_error.items()]
        for name, n, i, j, err in self.flagged[:20]:
            lines.append(f"FLAGGED {name} stage {n} entry ({i}, {j}): {err:.3e}")
        if len(self.flagged) > 20:
            lines.append(f"... {len(self.flagged) - 20} more flagged entries")
        return "\n".join(lines)


def _call(name, fn, *args):
    try:
        out = np.asarray(fn(*args), dtype=float)
    except EvaluatorError:
        raise
    except Exception as exc:  # noqa: BLE001 - evaluator failures are user code
        raise EvaluatorError(f"{name} evaluator failed: {exc}") from exc
    bad = ~np.isfinite(out)
    if bad.any():
        stage = int(np.argwhere(bad.reshape(out.shape[0], -1))[0, 0]) + 1 if out.ndim else None
        raise EvaluatorError(f"{name} evaluator returned non-finite values", stage=stage)
    return out


def _fd_jacobian(fun, Z, step):
    """Central differences of a stage-batched map; returns ``(N, m, n_Z)``."""
    N, nz = Z.shape
    cols = []
    for j in range(nz):
        Zp = Z.copy()
        Zm = Z.copy()
        Zp[:, j] += step
        Zm[:, j] -= step
        h = (Zp[:, j] - Zm[:, j]).reshape(N, 1)
        diff = (np.asarray(fun(Zp)) - np.asarray(fun(Zm))).reshape(N, -1)
        cols.append(diff / h)
    return np.stack(cols, axis=-1)


def _compare(report, name, analytic, fd):
    analytic = analytic.reshape(fd.shape)
    err = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
    report.max_error[name] = float(err.max()) if err.size else 0.0
    for n, i, j in np.argwhere(err > report.tol):
        report.flagged.append((name, int(n) + 1, int(i), int(j), float(err[n, i, j])))


def check_derivatives(
    problem: DiscretizedOCPEC,
    Z: Array,
    tol: float = 1e-6,
    step: float = 1e-7,
    multipliers: Optional[tuple] = None,
    seed: int = 0,
) -> DerivativeReport:
    """Compare supplied Jacobians and Hessians against central differences.

    Relative errors are measured as ``|a - fd| / max(1, |fd|)``.  Hessians are
    checked against differences of the corresponding gradients, contracted
    with ``multipliers = (sigma, eta, lam)`` (random if not given).
    """
    d = problem.dims
    Z = np.asarray(Z, dtype=float).reshape(d.N, d.n_Z)
    report = DerivativeReport(tol=tol)

    def cost(Zv):
        return _call("cost", problem.cost.value, Zv)

    _compare(report, "cost_gradient",
             _call("cost_gradient", problem.cost.gradient, Z)[:, None, :],
             _fd_jacobian(cost, Z, step))
    _compare(report, "cost_hessian",
             _call("cost_hessian", problem.cost.hessian, Z),
             _fd_jacobian(lambda Zv: _call("cost_gradient", problem.cost.gradient, Zv), Z, step))
    for label, smap in (("ineq", problem.ineq), ("eq", problem.eq), ("dyn", problem.dyn)):
        _compare(report, f"{label}_jacobian",
                 _call(f"{label}_jacobian", smap.jacobian, Z),
                 _fd_jacobian(lambda Zv, m=smap, lb=label: _call(lb, m.value, Zv), Z, step))
    _compare(report, "phi_jacobian", problem.phi_jacobian(Z),
             _fd_jacobian(lambda Zv: problem.phi(Zv, 0.0), Z, step))

    if multipliers is None:
        rng = np.random.default_rng(seed)
        sigma = rng.uniform(-1, 1, (d.N, d.n_sigma))
        eta = rng.uniform(-1, 1, (d.N, d.n_eta))
        lam = rng.uniform(-1, 1, (d.N, d.n_x))
    else:
        sigma, eta, lam = (np.asarray(m, dtype=float) for m in multipliers)

    def constraint_gradient(Zv):
        g = -np.einsum("ni,nij->nj", sigma, _call("ineq_jacobian", problem.ineq.jacobian, Zv))
        g += np.einsum("ni,nij->nj", eta, _call("eq_jacobian", problem.eq.jacobian, Zv))
        g += np.einsum("ni,nij->nj", lam, _call("dyn_jacobian", problem.dyn.jacobian, Zv))
        return g

    _compare(report, "constraint_hessian",
             _call("constraint_hessian", problem.constraint_hessian, Z, sigma, eta, lam),
             _fd_jacobian(constraint_gradient, Z, step))
    return report
