"""Mean-field birth-death dynamics on the 1D torus grid.

Contains the exact solution of the pure relative-entropy flow, forward
integrators for the pure flows (KL and chi-squared energies), their
kernelized regularization, the Langevin-augmented splitting scheme, the
driving energies, and the theoretical decay envelopes used as trajectory
invariants.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from . import __version__
from .errors import ConfigError, SolverAbort
from .grids import GridDensity
from .kernels import KernelSpec, grid_convolver
from .metrics import chi2_grid, kl_grid, w2_1d
from .records import ReplicateResult, RunRecord

FLOOR = 1e-300


@dataclass(frozen=True)
class MeanFieldState:
    """Grid density at time t evolving toward a torus target; the kernel is
    absent for the pure (non-regularized) flows."""

    rho: GridDensity
    t: float
    target: object
    kernel: KernelSpec | None = None

    def __post_init__(self):
        if self.rho.n != self.target.n or self.rho.period != self.target.period:
            raise ValueError("state grid does not match the target grid")
        if self.kernel is not None and self.kernel.epsilon < 2.0 * self.rho.h:
            raise ConfigError(
                f"bandwidth {self.kernel.epsilon} is below the resolvable "
                f"2h = {2.0 * self.rho.h}"
            )


def _renorm_log(w, h):
    return w - (logsumexp(w) + np.log(h))


def bd_exact(rho0, target, t):
    """Exact pure birth-death solution: pi * (rho0/pi)**exp(-t), renormalized.

    Evaluated in log space; requires strictly positive rho0.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if rho0.values.min() <= 0:
        raise ValueError("exact solution needs strictly positive initial data")
    log_pi = target.log_density_grid()
    w = log_pi + np.exp(-t) * (np.log(rho0.values) - log_pi)
    w = _renorm_log(w, rho0.h)
    return GridDensity(np.exp(w), rho0.period)


def step_bd(state, dt):
    """One explicit log-space Euler step of the pure KL flow.

    The log-ratio obeys a linear ODE driven by the current KL value, so the
    update is w <- w + dt * (log pi - w + KL) followed by renormalization;
    positivity holds by construction.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = state.rho.values
    h = state.rho.h
    log_pi = state.target.log_density_grid()
    w = np.log(np.maximum(rho, FLOOR))
    eta = w - log_pi
    kl = h * float(rho @ eta)
    w = w + dt * (kl - eta)
    w = _renorm_log(w, h)
    return MeanFieldState(GridDensity(np.exp(w), state.rho.period), state.t + dt,
                          state.target, state.kernel)


def step_bd2(state, dt):
    """One explicit log-space Euler step of the pure chi-squared flow
    d/dt rho = -rho * (rho/pi - int (rho/pi) drho)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = state.rho.values
    h = state.rho.h
    pi = state.target.density.values
    ratio = rho / np.maximum(pi, FLOOR)
    a = h * float(rho @ ratio)
    w = np.log(np.maximum(rho, FLOOR)) + dt * (a - ratio)
    w = _renorm_log(w, h)
    return MeanFieldState(GridDensity(np.exp(w), state.rho.period), state.t + dt,
                          state.target, state.kernel)


def _bde_rate(rho, target, kernel):
    """Mean-zero kernelized rate: variational derivative of the regularized
    energy minus its average under rho.

    The average subtracts the actual quadrature value of the convolution
    term (its continuum value is 1), which makes the pre-renormalization
    Euler step conserve mass exactly at grid level.
    """
    conv = grid_convolver(kernel, rho.n, rho.period)
    h = rho.h
    u = np.maximum(conv(rho.values), FLOOR)
    v = conv(rho.values / u)
    phi = np.log(u) - target.log_density_grid() + v
    return phi - h * float(rho.values @ phi)


def step_bde(state, dt):
    """One explicit Euler step of the kernel-regularized flow."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.kernel is None:
        raise ConfigError("kernelized step requires a kernel bandwidth")
    lam = _bde_rate(state.rho, state.target, state.kernel)
    rho_new = state.rho.values * (1.0 - dt * lam)
    rho_new = _guard_positivity(rho_new, state.t)
    rho_new /= state.rho.h * rho_new.sum()
    return MeanFieldState(GridDensity(rho_new, state.rho.period), state.t + dt,
                          state.target, state.kernel)


def _guard_positivity(rho, t):
    if not np.all(np.isfinite(rho)):
        raise SolverAbort(f"non-finite density at t={t}")
    n_bad = int((rho <= 0.0).sum())
    if n_bad:
        raise SolverAbort(f"positivity floor hit at {n_bad} grid points at t={t}")
    return rho


def _fokker_planck_half(rho_vals, target, h, dt_half):
    """Explicit central-difference substep of d/dt rho = Lap rho - div(rho g)
    with g = grad log pi, periodic stencils."""
    g = (np.roll(target.log_density_grid(), -1)
         - np.roll(target.log_density_grid(), 1)) / (2.0 * h)
    lap = (np.roll(rho_vals, -1) - 2.0 * rho_vals + np.roll(rho_vals, 1)) / h**2
    flux = rho_vals * g
    div = (np.roll(flux, -1) - np.roll(flux, 1)) / (2.0 * h)
    return rho_vals + dt_half * (lap - div)


def step_bdls(state, dt):
    """Strang splitting of the Langevin-augmented kernelized flow: half a
    Fokker-Planck step, a full kernelized birth-death step, half a
    Fokker-Planck step.  The diffusion substep requires dt/2 <= h^2/2."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.kernel is None:
        raise ConfigError("kernelized step requires a kernel bandwidth")
    h = state.rho.h
    if dt / 2.0 > h * h / 2.0 + 1e-15:
        raise ConfigError(
            f"CFL violation: dt/2 = {dt / 2.0} exceeds h^2/2 = {h * h / 2.0}"
        )
    rho = _fokker_planck_half(state.rho.values, state.target, h, dt / 2.0)
    rho = _guard_positivity(rho, state.t)
    mid = MeanFieldState(GridDensity(rho / (h * rho.sum()), state.rho.period),
                         state.t, state.target, state.kernel)
    mid = step_bde(mid, dt)
    rho = _fokker_planck_half(mid.rho.values, state.target, h, dt / 2.0)
    rho = _guard_positivity(rho, state.t)
    rho /= h * rho.sum()
    return MeanFieldState(GridDensity(rho, state.rho.period), state.t + dt,
                          state.target, state.kernel)


def energy_F(rho, target):
    """Driving energy of the pure flow: the relative entropy."""
    return kl_grid(rho, target.density)


def energy_Feps(rho, target, kernel):
    """Regularized energy int rho log(K_eps * rho / pi); never exceeds the
    relative entropy (their gap is -KL(rho | K_eps * rho) <= 0)."""
    conv = grid_convolver(kernel, rho.n, rho.period)
    u = np.maximum(conv(rho.values), FLOOR)
    integrand = rho.values * (np.log(u) - target.log_density_grid())
    return rho.h * float(integrand.sum())


# ---------------------------------------------------------------------------
# Theoretical decay envelopes.


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the decay bounds: M with inf(rho0/pi) >= exp(-M), and the
    initial KL and chi-squared divergences."""

    M: float
    kl0: float
    chi0: float

    @classmethod
    def from_grid(cls, rho0, pi):
        ratio = rho0.values / np.maximum(pi.values, FLOOR)
        m = max(0.0, -float(np.log(max(ratio.min(), FLOOR))))
        return cls(M=m, kl0=kl_grid(rho0, pi), chi0=chi2_grid(rho0, pi))


def kl_contraction_rate(u):
    """Instantaneous KL contraction rate u**2 / (9 e**u (e**u - u - 1)) at
    depressed bound parameter u = M * exp(-t); tends to 2/9 as u -> 0.

    A series for (e**u - u - 1) / (u**2/2) avoids 0/0 at small u.
    """
    if u < 0:
        raise ValueError("rate argument must be nonnegative")
    if u < 1e-4:
        den = 1.0 + u / 3.0 + u * u / 12.0 + u**3 / 60.0
    else:
        den = 2.0 * (np.expm1(u) - u) / (u * u)
    return 2.0 / (9.0 * np.exp(u) * den)


def chi2_contraction_rate(t, M):
    """Instantaneous chi-squared contraction rate
    2 / ((9 + 8 q)(1 + q)) with q = (e**M - 1) e**(-t); tends to 2/9."""
    q = np.expm1(M) * np.exp(-t)
    return 2.0 / ((9.0 + 8.0 * q) * (1.0 + q))


def _integrated(rate_fn, t0, t1):
    val, _ = quad(rate_fn, t0, t1, epsabs=1e-10, epsrel=1e-11, limit=200)
    return val


def bound_kl(params, t):
    """Both KL decay envelopes at time t: the direct bound
    M e**(-t) + e**(-t + M e**(-t)) KL0 and the Gronwall bound
    exp(-int_0^t rate) KL0."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    m, kl0 = params.M, params.kl0
    b1 = m * np.exp(-t) + np.exp(-t + m * np.exp(-t)) * kl0
    integral = _integrated(lambda s: kl_contraction_rate(m * np.exp(-s)), 0.0, t)
    b2 = np.exp(-integral) * kl0
    return float(b1), float(b2)


def bound_chi2(params, t):
    """Chi-squared decay envelope exp(-int_0^t rate) * chi0."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    integral = _integrated(lambda s: chi2_contraction_rate(s, params.M), 0.0, t)
    return float(np.exp(-integral) * params.chi0)


def bound_series(params, times):
    """Envelopes evaluated along a sorted time grid; the rate integrals are
    accumulated incrementally between consecutive recording times."""
    times = np.asarray(times, dtype=float)
    b1 = params.M * np.exp(-times) + np.exp(-times + params.M * np.exp(-times)) * params.kl0
    b2 = np.empty_like(times)
    bchi = np.empty_like(times)
    acc_kl = acc_chi = 0.0
    prev = 0.0
    for i, t in enumerate(times):
        if t > prev:
            acc_kl += _integrated(
                lambda s: kl_contraction_rate(params.M * np.exp(-s)), prev, t
            )
            acc_chi += _integrated(lambda s: chi2_contraction_rate(s, params.M), prev, t)
            prev = t
        b2[i] = np.exp(-acc_kl) * params.kl0
        bchi[i] = np.exp(-acc_chi) * params.chi0
    return b1, b2, bchi


# ---------------------------------------------------------------------------
# Trajectory drivers and the two grid experiments.

_STEPPERS = {"bd": step_bd, "bd2": step_bd2, "bde": step_bde, "bdls": step_bdls}


def simulate(state0, dynamics, dt, t_final, record_every=10, with_bounds=False,
             with_feps=False):
    """Advance a mean-field state and record diagnostics.

    Returns a dict of equal-length arrays: t, kl, chi2, mass_err, plus the
    decay envelopes (bound_b1, bound_b2, bound_chi2) when requested and the
    regularized energy (feps) when a kernel is present and requested.
    """
    stepper = _STEPPERS[dynamics]
    n_steps = int(round(t_final / dt))
    params = BoundParams.from_grid(state0.rho, state0.target.density) if with_bounds else None
    state = state0
    rec = {"t": [], "kl": [], "chi2": [], "mass_err": []}
    if with_feps:
        rec["feps"] = []

    def record(st):
        rec["t"].append(st.t)
        rec["kl"].append(kl_grid(st.rho, st.target.density))
        rec["chi2"].append(chi2_grid(st.rho, st.target.density))
        rec["mass_err"].append(abs(st.rho.mass() - 1.0))
        if with_feps:
            rec["feps"].append(energy_Feps(st.rho, st.target, st.kernel))

    record(state)
    for k in range(1, n_steps + 1):
        state = stepper(state, dt)
        if k % record_every == 0 or k == n_steps:
            record(state)
    out = {key: np.asarray(val) for key, val in rec.items()}
    if with_bounds:
        b1, b2, bchi = bound_series(params, out["t"])
        out["bound_b1"], out["bound_b2"], out["bound_chi2"] = b1, b2, bchi
    out["final_rho"] = state.rho
    return out


def run_decay_experiment(config=None, out_dir=None, **overrides):
    """Pure-flow decay study on the torus: evolve the uniform density under
    the KL flow and the chi-squared flow, recording divergences next to
    their theoretical envelopes.  Writes CSVs when out_dir is given."""
    from . import reports  # file emission lives with the runner plumbing

    cfg = {"n_grid": 1024, "dt": 1e-3, "t_final": 15.0, "record_every": 10,
           "potential": "bimodal_sine"}
    cfg.update(config or {})
    cfg.update(overrides)
    target = _make_torus_target(cfg["potential"], cfg["n_grid"])
    rho0 = GridDensity.uniform(cfg["n_grid"], target.period)
    t_start = time.perf_counter()
    replicates = []
    for dyn in ("bd", "bd2"):
        series = simulate(MeanFieldState(rho0, 0.0, target), dyn, cfg["dt"],
                          cfg["t_final"], cfg["record_every"], with_bounds=True)
        final = series.pop("final_rho")
        replicates.append(ReplicateResult(label=dyn, seed=None, series=series,
                                          finals={"rho": final}))
    record = RunRecord(config=dict(cfg), replicates=replicates,
                       wall_clock=time.perf_counter() - t_start,
                       version=__version__)
    if out_dir is not None:
        reports.emit_decay(record, out_dir)
    return record


def run_eps_scaling(config=None, out_dir=None, **overrides):
    """Kernelized-flow bias study: run the regularized dynamics to a fixed
    horizon for a bandwidth ladder and regress the terminal KL against the
    bandwidth on log-log axes.  Writes CSVs when out_dir is given."""
    from . import reports

    cfg = {"n_grid": 1024, "dt": 1e-3, "t_final": 15.0, "record_every": 10,
           "potential": "bimodal_sine",
           "eps_ladder": [0.05, 0.1, 0.2, 0.3, 0.4]}
    cfg.update(config or {})
    cfg.update(overrides)
    target = _make_torus_target(cfg["potential"], cfg["n_grid"])
    rho0 = GridDensity.uniform(cfg["n_grid"], target.period)
    t_start = time.perf_counter()
    replicates = []
    finals_kl, finals_feps, finals_w2 = [], [], []
    for eps in sorted(cfg["eps_ladder"]):
        kernel = KernelSpec(float(eps), 1)
        series = simulate(MeanFieldState(rho0, 0.0, target, kernel), "bde",
                          cfg["dt"], cfg["t_final"], cfg["record_every"],
                          with_feps=True)
        final = series.pop("final_rho")
        finals_kl.append(series["kl"][-1])
        finals_feps.append(series["feps"][-1])
        finals_w2.append(w2_1d(final, target.density, topology="circle"))
        replicates.append(ReplicateResult(label=f"eps={eps}", seed=None,
                                          series=series, finals={"rho": final}))
    ladder = np.asarray(sorted(cfg["eps_ladder"]), dtype=float)
    slope_kl = float(np.polyfit(np.log(ladder), np.log(finals_kl), 1)[0])
    slope_w2 = float(np.polyfit(np.log(ladder), np.log(finals_w2), 1)[0])
    record = RunRecord(
        config=dict(cfg),
        replicates=replicates,
        wall_clock=time.perf_counter() - t_start,
        version=__version__,
        summary={
            "eps_ladder": [float(e) for e in ladder],
            "kl_final": [float(v) for v in finals_kl],
            "feps_final": [float(v) for v in finals_feps],
            "w2_circle_final": [float(v) for v in finals_w2],
            "loglog_slope_kl": slope_kl,
            "loglog_slope_w2": slope_w2,
        },
    )
    if out_dir is not None:
        reports.emit_eps_scaling(record, out_dir)
    return record


def _make_torus_target(name, n):
    from .targets import torus_bimodal_target, torus_uniform_target

    if name == "bimodal_sine":
        return torus_bimodal_target(n)
    if name == "uniform":
        return torus_uniform_target(n)
    raise ConfigError(f"unknown torus potential {name!r}")
