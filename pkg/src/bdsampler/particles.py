"""Finite-N samplers: unadjusted Langevin, Stein variational descent, the
birth-death jump step driven by kernelized KL or chi-squared rates, the
alternating splitting scheme, and the deterministic masses ODE for fixed
particle locations.

Rate computations are exact O(N^2) double sums; the jump step resolves
events sequentially in a seeded random order so every run is reproducible
from its seed.  Public step functions are thin wrappers over array-level
helpers that the trajectory driver reuses, so composing the ops by hand
reproduces a driver run bit for bit.
"""

import logging
import threading
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

try:  # fast path: fill a persistent square buffer without re-zeroing it
    from scipy.spatial.distance import _distance_wrap

    _square_fill = _distance_wrap.to_squareform_from_vector_wrap
except ImportError:  # pragma: no cover
    _square_fill = None

from .errors import ConfigError, SolverAbort
from .kernels import pairwise_kernel

log = logging.getLogger(__name__)

# Rates are clipped here to protect against KDE underflow in far tails.
RATE_CLIP = 1e6

_tls = threading.local()


def _condensed_buffer(n):
    size = n * (n - 1) // 2
    buf = getattr(_tls, "dc", None)
    if buf is None or buf.shape[0] != size:
        buf = np.empty(size)
        _tls.dc = buf
        _tls.mask = np.empty(size, dtype=bool)
        _tls.square = np.zeros((n, n))
    return buf


def _square_from_condensed(kc, n):
    if _square_fill is None:
        return squareform(kc)
    out = _tls.square
    _square_fill(out, kc)
    return out


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particle positions with a probability weight vector (uniform for
    the stochastic samplers, general for the masses ODE)."""

    positions: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (N, d) array")
        w = self.weights
        if w is None:
            w = np.full(pos.shape[0], 1.0 / pos.shape[0])
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != (pos.shape[0],):
                raise ValueError("weights must have shape (N,)")
            if w.min() <= 0 or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be positive and sum to 1")
        pos = pos.copy()
        pos.setflags(write=False)
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def has_uniform_weights(self):
        return bool(np.all(self.weights == 1.0 / self.n))


@dataclass(frozen=True)
class JumpRates:
    """Signed per-particle rates; positive kills, negative duplicates.
    ``n_clipped`` counts entries cut off at the overflow guard."""

    values: np.ndarray
    n_clipped: int = 0


def _require_uniform(ensemble):
    if not ensemble.has_uniform_weights():
        raise ValueError("this operation requires uniform particle weights")


def _check_grad(grad):
    bad = ~np.isfinite(grad).all(axis=1)
    if bad.any():
        raise SolverAbort(
            f"non-finite gradient at particles {np.where(bad)[0].tolist()}"
        )


def _ula_positions(pos, grad, dt, rng):
    new = pos + dt * grad
    new += np.sqrt(2.0 * dt) * rng.standard_normal(new.shape)
    return new


def ula_step(ensemble, target, dt, rng):
    """Euler-Maruyama step x <- x + dt * grad log pi + sqrt(2 dt) * noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grad = np.atleast_2d(target.grad_log_density(ensemble.positions))
    _check_grad(grad)
    return ParticleEnsemble(_ula_positions(ensemble.positions, grad, dt, rng),
                            ensemble.weights)


def median_pairwise_sq(positions, _dc=None):
    """Median of the full N*N squared-distance matrix (diagonal included).

    The full sorted order is N zeros followed by every pair value twice, so
    the needed order statistics come from one partition of the condensed
    upper triangle plus a tail minimum.
    """
    n = positions.shape[0]
    if n == 1:
        return 0.0
    if _dc is None:
        _dc = pdist(positions, "sqeuclidean")
    total = n * n
    ranks = [total // 2] if total % 2 else [total // 2 - 1, total // 2]
    pair_ranks = sorted({(k - n) // 2 for k in ranks if k >= n})
    if not pair_ranks:
        return 0.0
    part = np.partition(_dc, pair_ranks[0])
    values = []
    for k in ranks:
        if k < n:
            values.append(0.0)
        elif (k - n) // 2 == pair_ranks[0]:
            values.append(part[pair_ranks[0]])
        else:
            values.append(part[pair_ranks[0] + 1 :].min())
    return float(np.mean(values))


def svgd_bandwidth_sq(positions, _dc=None):
    """Median-trick bandwidth: median of pairwise squared distances over
    2 log(N + 1); falls back to 1 when degenerate (N = 1 or coincident)."""
    med = median_pairwise_sq(positions, _dc)
    bw2 = med / (2.0 * np.log(positions.shape[0] + 1.0))
    return bw2 if bw2 > 0.0 else 1.0


def _unit_kernel_matrix(pos, inv_two_eps_sq, dc=None):
    """Symmetric matrix exp(-|x_i - x_j|^2 * inv_two_eps_sq) with unit
    diagonal; normalization constants are left to the caller.

    Exponents below -708 underflow the normal range; they are flushed to an
    exact zero instead.  That changes nothing within tolerance anywhere (the
    unit diagonal dominates every row sum, and the chi-squared rates cap the
    inverse density at exp(700), bounding the discarded products by exp(-8))
    while keeping both the exponential and the downstream matrix products on
    their fast, subnormal-free paths.
    """
    n = pos.shape[0]
    if n == 1:
        return np.ones((1, 1))
    if dc is None:
        dc = _condensed_buffer(n)
        pdist(pos, "sqeuclidean", out=dc)
    np.multiply(dc, -inv_two_eps_sq, out=dc)
    underflow = np.less(dc, -708.0, out=_tls.mask)
    np.maximum(dc, -708.0, out=dc)
    np.exp(dc, out=dc)
    if underflow.any():
        dc[underflow] = 0.0
    kmat = _square_from_condensed(dc, n)
    np.fill_diagonal(kmat, 1.0)
    return kmat


def _svgd_positions(pos, grad, dt):
    n, d = pos.shape
    dc = _condensed_buffer(n)
    if n > 1:
        pdist(pos, "sqeuclidean", out=dc)
    bw2 = svgd_bandwidth_sq(pos, dc if n > 1 else None)
    kmat = _unit_kernel_matrix(pos, 1.0 / (2.0 * bw2), dc if n > 1 else None)
    stacked = np.empty((n, 2 * d + 1))
    stacked[:, :d] = grad
    stacked[:, d : 2 * d] = pos
    stacked[:, 2 * d] = 1.0
    prod = kmat @ stacked
    drift = prod[:, :d]
    k_pos = prod[:, d : 2 * d]
    row_sum = prod[:, 2 * d]
    return pos + (dt / n) * (drift + (row_sum[:, None] * pos - k_pos) / bw2)


def svgd_step(ensemble, target, dt):
    """Deterministic Stein update: kernel-weighted gradient transport plus
    kernel repulsion, RBF kernel with the median-trick bandwidth."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grad = np.atleast_2d(target.grad_log_density(ensemble.positions))
    _check_grad(grad)
    return ParticleEnsemble(_svgd_positions(ensemble.positions, grad, dt),
                            ensemble.weights)


def _kl_rate_values(pos, log_pi, kernel):
    kmat = _unit_kernel_matrix(pos, 1.0 / (2.0 * kernel.epsilon**2))
    row = kmat.sum(axis=1)  # N * kde / normalization; the i=i term keeps it >= 1
    lam = np.log(row)
    lam -= lam.mean()
    lam += kmat @ (1.0 / row)
    lam -= 1.0
    lam -= log_pi - log_pi.mean()
    return lam


def bd_rates_kl(ensemble, target, kernel):
    """Kernelized KL jump rates.

    For uniform weights the rate at particle i combines the log KDE, the
    kernel-ratio sum, and the unnormalized log target, each centered by its
    particle average, plus the ratio term's continuum mean -1.  Kernel
    normalization constants cancel in the centered differences, so the rate
    is invariant under shifting log pi by a constant and has exact zero
    particle mean up to roundoff.
    """
    _require_uniform(ensemble)
    pos = ensemble.positions
    if pos.shape[1] != kernel.dim:
        raise ValueError("ensemble/kernel dimension mismatch")
    log_pi = np.atleast_1d(target.log_density_unnorm(pos))
    return _clip_rates(_kl_rate_values(pos, log_pi, kernel))


def bd_rates_kl_mollified_only(ensemble, target, kernel):
    """Alternative non-gradient-flow rate: centered log(K * rho / pi) with no
    kernel-ratio term.  Diagnostic A/B variant only."""
    _require_uniform(ensemble)
    pos = ensemble.positions
    kmat = _unit_kernel_matrix(pos, 1.0 / (2.0 * kernel.epsilon**2))
    log_kde = np.log(kmat.sum(axis=1))
    log_pi = np.atleast_1d(target.log_density_unnorm(pos))
    lam = (log_kde - log_kde.mean()) - (log_pi - log_pi.mean())
    return _clip_rates(lam)


def _chi2_rate_values(pos, log_pi_normalized, kernel):
    n = pos.shape[0]
    kmat = _unit_kernel_matrix(pos, 1.0 / (2.0 * kernel.epsilon**2))
    inv_pi = np.exp(-np.clip(log_pi_normalized, -700.0, 700.0))
    delta = 0.5 * kmat.sum(axis=1) * inv_pi + 0.5 * (kmat @ inv_pi)
    delta *= kernel.normalization / n
    return delta - delta.mean()


def bd_rates_chi2(ensemble, target, kernel, log_normalizer=None):
    """Kernelized chi-squared jump rates.

    The variational derivative (K*rho)/(2 pi) + K*(rho/pi)/2 is evaluated on
    the empirical measure and centered.  Unlike the KL rate this depends on
    the normalization of pi: the target must carry an exact
    ``log_norm_const`` or one must be supplied.
    """
    _require_uniform(ensemble)
    if log_normalizer is None:
        log_normalizer = getattr(target, "log_norm_const", None)
    if log_normalizer is None:
        raise ConfigError(
            "chi-squared rates need a normalized target: supply log_normalizer"
        )
    pos = ensemble.positions
    log_pi = np.atleast_1d(target.log_density_unnorm(pos)) - log_normalizer
    return _clip_rates(_chi2_rate_values(pos, log_pi, kernel))


def _clip_rates(lam):
    n_clipped = int((np.abs(lam) > RATE_CLIP).sum())
    if n_clipped:
        log.debug("clipped %d jump rates at magnitude %g", n_clipped, RATE_CLIP)
        lam = np.clip(lam, -RATE_CLIP, RATE_CLIP)
    return JumpRates(values=lam, n_clipped=n_clipped)


def _jump_positions(pos, lam, dt, rng, carry=None):
    """In place: resolve fired events sequentially in a seeded random order.
    Partner indices are pre-drawn; copied values are read at resolution time,
    so partners come from the current, already-modified ensemble.

    ``carry`` is an optional row-aligned array (such as cached gradients,
    which are pure functions of position) whose rows are copied alongside.
    """
    n = pos.shape[0]
    prob = -np.expm1(-np.abs(lam) * dt)
    fired = np.where(rng.random(n) < prob)[0]
    if fired.size == 0:
        return pos, 0
    fired = fired[rng.permutation(fired.size)]
    if n == 1:
        log.debug("%d jump events skipped: no partner available", fired.size)
        return pos, 0
    partners = rng.integers(0, n - 1, size=fired.size)
    partners += partners >= fired
    for idx, partner in zip(fired, partners):
        source, dest = (partner, idx) if lam[idx] > 0 else (idx, partner)
        pos[dest] = pos[source]
        if carry is not None:
            carry[dest] = carry[source]
    return pos, int(fired.size)


def bd_jump_step(ensemble, rates, dt, rng):
    """Resolve birth-death events over one time step.

    Each particle fires independently with probability 1 - exp(-|rate| dt).
    Fired events are walked in a seeded random order: a positive rate kills
    the particle and copies a uniformly chosen other one in its place, a
    negative rate duplicates the particle over a uniformly chosen victim.
    N and the uniform weights never change; with N = 1 events are skipped
    for lack of a partner.
    """
    _require_uniform(ensemble)
    lam = rates.values if isinstance(rates, JumpRates) else np.asarray(rates)
    pos, _ = _jump_positions(np.array(ensemble.positions), lam, dt, rng)
    return ParticleEnsemble(pos, ensemble.weights)


def masses_ode_step(ensemble, target, kernel, dt, period=None, method="euler"):
    """Advance the deterministic weight ODE at fixed particle positions.

    The weight rate is the kernelized KL variational derivative evaluated on
    the weighted ensemble, centered by its weighted mean; the exact centering
    keeps the total mass conserved before renormalization.  If an Euler step
    would push any weight through zero, the step is bisected recursively.
    With ``period`` the kernel is wrapped over the torus in every coordinate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos = ensemble.positions
    kmat = pairwise_kernel(kernel, pos, periodic=period)
    log_pi = np.atleast_1d(target.log_density_unnorm(pos))

    def rate(m):
        kde_w = kmat @ m
        ratio = kmat @ (m / kde_w)
        centered = np.log(kde_w) - log_pi
        return centered - float(m @ centered) + ratio - 1.0

    def advance(m, step, depth):
        if method == "rk4":
            k1 = -m * rate(m)
            m2 = np.maximum(m + 0.5 * step * k1, 1e-300)
            k2 = -m2 * rate(m2)
            m3 = np.maximum(m + 0.5 * step * k2, 1e-300)
            k3 = -m3 * rate(m3)
            m4 = np.maximum(m + step * k3, 1e-300)
            k4 = -m4 * rate(m4)
            new = m + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            new = m * (1.0 - step * rate(m))
        if new.min() <= 0.0:
            if depth >= 40:
                raise SolverAbort("masses ODE cannot keep weights positive")
            half = advance(m, step / 2.0, depth + 1)
            return advance(half, step / 2.0, depth + 1)
        return new

    new = advance(np.array(ensemble.weights), dt, 0)
    return ParticleEnsemble(pos, new / new.sum())


# ---------------------------------------------------------------------------
# Trajectory drivers.

ALGORITHMS = ("ula", "svgd", "bdls_kl", "bdls_chi2")


def derive_streams(master_seed, replicate=0):
    """Independent child generators (init, langevin, jump) for one replicate.

    Separate streams keep the Langevin noise identical whether or not jump
    events are drawn, so a one-particle splitting run reproduces the plain
    Langevin trajectory bit for bit.
    """
    root = np.random.SeedSequence((int(master_seed), int(replicate)))
    kids = root.spawn(3)
    return tuple(np.random.default_rng(k) for k in kids)


def particle_run(algorithm, target, n_particles, dt, t_final, seed,
                 kernel=None, replicate=0, init_sampler=None, recorders=None,
                 thinning=100, log_normalizer=None):
    """Iterate one sampler and record diagnostics at thinned intervals.

    ``init_sampler(n, rng)`` draws the initial positions; ``recorders`` maps
    metric names to functions of the ensemble.  Fully deterministic given
    (seed, replicate).
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if algorithm in ("bdls_kl", "bdls_chi2") and kernel is None:
        raise ConfigError(f"{algorithm} requires a kernel bandwidth")
    if algorithm == "bdls_chi2":
        if log_normalizer is None:
            log_normalizer = getattr(target, "log_norm_const", None)
        if log_normalizer is None:
            raise ConfigError(
                "chi-squared rates need a normalized target: supply log_normalizer"
            )
    rng_init, rng_langevin, rng_jump = derive_streams(seed, replicate)
    if init_sampler is None:
        init_sampler = lambda n, rng: rng.standard_normal((n, target.dim))
    pos = np.atleast_2d(np.asarray(init_sampler(n_particles, rng_init), dtype=float))
    recorders = recorders or {}
    n_steps = int(round(t_final / dt))
    times = [0.0]
    series = {name: [fn(ParticleEnsemble(pos))] for name, fn in recorders.items()}
    n_clipped = 0
    # Gradients are pure functions of position, so the splitting loop can
    # evaluate log density and gradient together after the drift move and
    # carry gradient rows through the jump copies.
    fused = getattr(target, "log_density_and_grad", None)
    grad = None
    for k in range(1, n_steps + 1):
        if grad is None:
            grad = np.atleast_2d(target.grad_log_density(pos))
            _check_grad(grad)
        if algorithm == "svgd":
            pos = _svgd_positions(pos, grad, dt)
            grad = None
        else:
            pos = _ula_positions(pos, grad, dt, rng_langevin)
            grad = None
        if algorithm in ("bdls_kl", "bdls_chi2"):
            if fused is not None:
                log_pi, grad = fused(pos)
                log_pi = np.atleast_1d(log_pi)
                grad = np.atleast_2d(grad)
                _check_grad(grad)
            else:
                log_pi = np.atleast_1d(target.log_density_unnorm(pos))
            if algorithm == "bdls_kl":
                rates = _clip_rates(_kl_rate_values(pos, log_pi, kernel))
            else:
                rates = _clip_rates(
                    _chi2_rate_values(pos, log_pi - log_normalizer, kernel)
                )
            n_clipped += rates.n_clipped
            pos, _ = _jump_positions(pos, rates.values, dt, rng_jump,
                                     carry=grad)
        if k % thinning == 0 or k == n_steps:
            times.append(k * dt)
            ens = ParticleEnsemble(pos)
            for name, fn in recorders.items():
                series[name].append(fn(ens))
    out = {"t": np.asarray(times)}
    out.update({name: np.asarray(vals) for name, vals in series.items()})
    return {"series": out, "final": ParticleEnsemble(pos), "n_clipped": n_clipped}


def bdls_run(target, kernel, n_particles, dt, t_final, seed, variant="kl",
             **kwargs):
    """Alternating Langevin/birth-death splitting run; ``variant`` picks the
    KL or chi-squared jump rates."""
    if variant not in ("kl", "chi2"):
        raise ConfigError(f"unknown birth-death variant {variant!r}")
    return particle_run(f"bdls_{variant}", target, n_particles, dt, t_final,
                        seed, kernel=kernel, **kwargs)
