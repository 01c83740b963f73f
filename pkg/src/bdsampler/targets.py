"""Target measures pi ~ exp(-V): Gaussian mixtures with analytic moments,
1D torus potentials, and the Bayesian logistic-regression posterior."""

import csv as _csv

import numpy as np
from scipy.special import logsumexp

from .grids import GridDensity

LOG_2PI = float(np.log(2.0 * np.pi))


class GaussianMixture:
    """Mixture of Gaussians with exact (normalized) log-density.

    ``log_density_unnorm`` returns the true normalized log-density, so the
    recorded normalizing offset ``log_norm_const`` is 0; tests and the
    chi-squared jump rates may rely on that.
    """

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=float)
        m = np.atleast_2d(np.asarray(means, dtype=float))
        c = np.asarray(covariances, dtype=float)
        if c.ndim == 2:  # diagonal covariances given as (K, d)
            c = np.stack([np.diag(row) for row in c])
        if w.ndim != 1 or m.shape[0] != w.shape[0] or c.shape[0] != w.shape[0]:
            raise ValueError("weights, means, covariances must share the leading size")
        if abs(w.sum() - 1.0) > 1e-12 or w.min() <= 0:
            raise ValueError("mixture weights must be positive and sum to 1")
        self.weights = w
        self.means = m
        self.covariances = c
        self.dim = m.shape[1]
        self.log_norm_const = 0.0
        # Cholesky factors double as the SPD check.
        self._chol = np.linalg.cholesky(c)
        self._prec = np.linalg.inv(c)
        self._log_det = 2.0 * np.log(
            np.diagonal(self._chol, axis1=1, axis2=2)
        ).sum(axis=1)
        self._log_w = np.log(w)
        # All-diagonal covariances admit a loop-free evaluation path.
        var = np.diagonal(c, axis1=1, axis2=2)
        if np.all(c == var[:, None, :] * np.eye(self.dim)):
            self._diag_inv_var = 1.0 / var
            self._diag_log_const = self._log_w - 0.5 * (
                self.dim * LOG_2PI + np.log(var).sum(axis=1))
        else:
            self._diag_inv_var = None

    @classmethod
    def standard_normal(cls, dim=1):
        return cls([1.0], np.zeros((1, dim)), np.eye(dim)[None])

    def _component_log_pdfs(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.weights.shape[0]))
        for k in range(self.weights.shape[0]):
            diff = x - self.means[k]
            quad = ((diff @ self._prec[k]) * diff).sum(axis=1)
            out[:, k] = -0.5 * (self.dim * LOG_2PI + self._log_det[k] + quad)
        return out

    def _weighted_log_pdfs(self, pts):
        if self._diag_inv_var is not None:
            diff = pts[:, None, :] - self.means[None]
            quad = np.einsum("nkd,kd->nk", diff * diff, self._diag_inv_var)
            return self._diag_log_const - 0.5 * quad, diff
        return self._component_log_pdfs(pts) + self._log_w, None

    def log_density_unnorm(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input point")
        comp, _ = self._weighted_log_pdfs(np.atleast_2d(x))
        peak = comp.max(axis=1)
        lp = peak + np.log(np.exp(comp - peak[:, None]).sum(axis=1))
        return float(lp[0]) if single else lp

    def grad_log_density(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite input point")
        grad = self._grad_from_components(pts, *self._weighted_log_pdfs(pts))
        return grad[0] if single else grad

    def _grad_from_components(self, pts, comp, diff):
        resp = np.exp(comp - comp.max(axis=1)[:, None])
        resp /= resp.sum(axis=1)[:, None]
        if diff is not None:
            return -np.einsum("nk,nkd->nd", resp,
                              diff * self._diag_inv_var[None])
        grad = np.zeros_like(pts)
        for k in range(self.weights.shape[0]):
            d = pts - self.means[k]
            grad -= resp[:, k : k + 1] * (d @ self._prec[k])
        return grad

    def log_density_and_grad(self, x):
        """Fused evaluation sharing the per-component work between the log
        density and its gradient."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite input point")
        comp, diff = self._weighted_log_pdfs(pts)
        peak = comp.max(axis=1)
        lp = peak + np.log(np.exp(comp - peak[:, None]).sum(axis=1))
        return lp, self._grad_from_components(pts, comp, diff)

    def sample(self, n, rng):
        """n i.i.d. draws: categorical component draw, then Gaussian draw."""
        if n < 1:
            raise ValueError("need n >= 1 samples")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        comps = rng.choice(self.weights.shape[0], size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comps] + np.einsum("nij,nj->ni", self._chol[comps], z)


def mixture_moment(mixture, coeffs):
    """Expectation of f(x) = sum_k c_k x_k**2 under the mixture: each
    component contributes w_i * sum_k c_k * (m_ik**2 + Sigma_i[kk])."""
    c = np.asarray(coeffs, dtype=float)
    if c.shape[0] != mixture.dim:
        raise ValueError("coefficient length must match mixture dimension")
    var = np.diagonal(mixture.covariances, axis1=1, axis2=2)
    per_comp = ((mixture.means**2 + var) * c).sum(axis=1)
    return float(mixture.weights @ per_comp)


def gmm_benchmark_target():
    """Four narrow, well-separated planar modes; a standard metastability
    stress test for diffusion samplers."""
    return GaussianMixture(
        weights=[0.5, 0.1, 0.1, 0.3],
        means=[[0.0, 2.0], [-3.0, 5.0], [0.0, 8.0], [3.0, 5.0]],
        covariances=[[0.8, 0.01], [0.01, 1.0], [0.8, 0.01], [0.01, 1.0]],
    )


GMM_BENCHMARK_INIT_MEAN = np.array([0.0, 8.0])
GMM_BENCHMARK_INIT_COV = 0.3 * np.eye(2)
GMM_BENCHMARK_OBSERVABLE = np.array([1.0 / 3.0, 1.0 / 5.0])


class TorusTarget:
    """Gibbs density exp(-V)/Z on [0, period), with V sampled on a uniform
    grid and Z computed by the same rectangle rule used everywhere else."""

    def __init__(self, potential, n=1024, period=2.0 * np.pi, grad_potential=None):
        self.potential = potential
        self.period = float(period)
        self.n = int(n)
        self.grad_potential = grad_potential
        x = np.arange(self.n) * (self.period / self.n)
        self.grid_values = np.asarray(potential(x), dtype=float)
        h = self.period / self.n
        self.log_normalizer = float(logsumexp(-self.grid_values) + np.log(h))
        self.density = GridDensity(
            np.exp(-self.grid_values - self.log_normalizer), self.period
        )
        # log pi = log_density_unnorm - log_norm_const
        self.log_norm_const = self.log_normalizer
        self.dim = 1

    @property
    def normalizer(self):
        return float(np.exp(self.log_normalizer))

    @staticmethod
    def _flatten(x):
        # Positions may arrive as scalars, (N,), or (N, 1) ensembles.
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input point")
        if x.ndim == 2 and x.shape[1] == 1:
            return x[:, 0], True
        return x, False

    def log_density_unnorm(self, x):
        pts, _ = self._flatten(x)
        return -self.potential(pts)

    def grad_log_density(self, x, fd_step=1e-6):
        pts, column = self._flatten(x)
        if self.grad_potential is not None:
            g = -np.asarray(self.grad_potential(pts), dtype=float)
        else:
            g = -(self.potential(pts + fd_step) - self.potential(pts - fd_step)) / (
                2.0 * fd_step
            )
        return g[:, None] if column else g

    def log_density_grid(self):
        return -self.grid_values - self.log_normalizer


def torus_bimodal_target(n=1024, period=2.0 * np.pi):
    """The unequal double-well potential sin(x) + 2 sin(2x) on the torus."""
    return TorusTarget(
        potential=lambda x: np.sin(x) + 2.0 * np.sin(2.0 * x),
        n=n,
        period=period,
        grad_potential=lambda x: np.cos(x) + 4.0 * np.cos(2.0 * x),
    )


def torus_uniform_target(n=1024, period=2.0 * np.pi):
    return TorusTarget(potential=lambda x: np.zeros_like(np.asarray(x, float)), n=n, period=period,
                       grad_potential=lambda x: np.zeros_like(np.asarray(x, float)))


class LogisticPosterior:
    """Binary logistic regression with Gaussian prior N(0, 1/alpha * I) on the
    weights and an exponential prior on the precision alpha.

    The sampler state is z = [w, log(alpha)]; the log-transform Jacobian is
    included so the state space is unconstrained.
    """

    def __init__(self, features, labels, prior_rate=0.01, add_intercept=True):
        X = np.atleast_2d(np.asarray(features, dtype=float))
        y = np.asarray(labels, dtype=float)
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix must be finite")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +/-1")
        if add_intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        self.features = X
        self.labels = y
        self.prior_rate = float(prior_rate)
        self.n_weights = X.shape[1]
        self.dim = self.n_weights + 1
        self.log_norm_const = None  # posterior normalizer unknown

    def _split(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.dim:
            raise ValueError(f"state must have length {self.dim}")
        return z[:, :-1], z[:, -1]

    def log_density_unnorm(self, z):
        single = np.asarray(z).ndim == 1
        w, s = self._split(z)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite input point")
        margins = (self.features @ w.T) * self.labels[:, None]  # (n_data, n_states)
        loglik = -np.logaddexp(0.0, -margins).sum(axis=0)
        alpha = np.exp(s)
        sq = (w**2).sum(axis=1)
        logprior = 0.5 * self.n_weights * s - 0.5 * alpha * sq - self.prior_rate * alpha
        out = loglik + logprior + s  # + s: Jacobian of alpha = exp(s)
        return float(out[0]) if single else out

    def grad_log_density(self, z):
        single = np.asarray(z).ndim == 1
        w, s = self._split(z)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite input point")
        out = self._grad_impl(w, s)
        return out[0] if single else out

    def _grad_impl(self, w, s, margins=None):
        if margins is None:
            margins = (self.features @ w.T) * self.labels[:, None]
        sig = 1.0 / (1.0 + np.exp(margins))  # sigmoid(-margin)
        grad_w = (self.features * self.labels[:, None]).T @ sig  # (n_weights, n_states)
        alpha = np.exp(s)
        grad_w = grad_w.T - alpha[:, None] * w
        grad_s = (
            0.5 * self.n_weights
            - 0.5 * alpha * (w**2).sum(axis=1)
            - self.prior_rate * alpha
            + 1.0
        )
        return np.hstack([grad_w, grad_s[:, None]])

    def log_density_and_grad(self, z):
        """Fused evaluation sharing the data-term margins between the log
        density and its gradient."""
        w, s = self._split(z)
        margins = (self.features @ w.T) * self.labels[:, None]
        loglik = -np.logaddexp(0.0, -margins).sum(axis=0)
        alpha = np.exp(s)
        logprior = (0.5 * self.n_weights * s - 0.5 * alpha * (w**2).sum(axis=1)
                    - self.prior_rate * alpha)
        return loglik + logprior + s, self._grad_impl(w, s, margins)

    def sample_prior(self, n, rng):
        """Prior draw of [w, log(alpha)] used to initialize particle runs."""
        alpha = rng.exponential(scale=1.0 / self.prior_rate, size=n)
        w = rng.standard_normal((n, self.n_weights)) / np.sqrt(alpha)[:, None]
        return np.hstack([w, np.log(alpha)[:, None]])

    def predict_proba(self, states, features_test):
        """Posterior-mean plug-in probability of label +1, averaged over
        particles."""
        X = np.atleast_2d(np.asarray(features_test, dtype=float))
        if X.shape[1] == self.n_weights - 1:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        w = np.atleast_2d(states)[:, :-1]
        probs = 1.0 / (1.0 + np.exp(-(X @ w.T)))
        return probs.mean(axis=1)

    def accuracy(self, states, features_test, labels_test):
        p = self.predict_proba(states, features_test)
        pred = np.where(p >= 0.5, 1.0, -1.0)
        return float((pred == np.asarray(labels_test, dtype=float)).mean())

    def mean_log_likelihood(self, states, features_test, labels_test):
        """Mean over test rows of log posterior-predictive probability."""
        X = np.atleast_2d(np.asarray(features_test, dtype=float))
        if X.shape[1] == self.n_weights - 1:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        y = np.asarray(labels_test, dtype=float)
        w = np.atleast_2d(states)[:, :-1]
        prob_y = 1.0 / (1.0 + np.exp(-(X @ w.T) * y[:, None]))
        return float(np.log(np.maximum(prob_y.mean(axis=1), 1e-300)).mean())


def load_dataset(path, fmt="csv", label_col=-1, standardize=False, n_features=None):
    """Read a binary-classification dataset into (features, labels).

    CSV rows hold the label in ``label_col`` (last column by default);
    LIBSVM lines are ``label idx:val ...`` with 1-based indices.  Labels in
    {0, 1} are remapped to {-1, +1}.  Malformed rows raise with all
    offending line numbers listed.
    """
    if fmt == "csv":
        rows, bad = [], []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(_csv.reader(fh), start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    bad.append(lineno)
        if bad:
            raise ValueError(f"unparseable rows at lines {bad} in {path}")
        if not rows:
            raise ValueError(f"no data rows in {path}")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValueError(f"inconsistent column counts {sorted(widths)} in {path}")
        data = np.asarray(rows, dtype=float)
        labels = data[:, label_col]
        features = np.delete(data, label_col % data.shape[1], axis=1)
    elif fmt == "libsvm":
        labels_list, entries, bad = [], [], []
        max_idx = 0
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                try:
                    lab = float(parts[0])
                    pairs = []
                    for p in parts[1:]:
                        idx, val = p.split(":")
                        idx = int(idx)
                        if idx < 1:
                            raise ValueError
                        pairs.append((idx, float(val)))
                except (ValueError, IndexError):
                    bad.append(lineno)
                    continue
                labels_list.append(lab)
                entries.append(pairs)
                if pairs:
                    max_idx = max(max_idx, max(i for i, _ in pairs))
        if bad:
            raise ValueError(f"unparseable rows at lines {bad} in {path}")
        if not labels_list:
            raise ValueError(f"no data rows in {path}")
        d = n_features if n_features is not None else max_idx
        features = np.zeros((len(labels_list), d))
        for r, pairs in enumerate(entries):
            for idx, val in pairs:
                if idx > d:
                    raise ValueError(f"feature index {idx} exceeds n_features={d}")
                features[r, idx - 1] = val
        labels = np.asarray(labels_list, dtype=float)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")

    allowed = {-1.0, 0.0, 1.0}
    if not set(np.unique(labels)) <= allowed:
        raise ValueError(f"labels outside {{-1, 0, +1}} in {path}")
    labels = np.where(labels > 0, 1.0, -1.0)
    if standardize:
        mu = features.mean(axis=0)
        sd = features.std(axis=0)
        features = (features - mu) / np.maximum(sd, 1e-12)
    return features, labels


def train_test_split(features, labels, test_fraction=0.2, seed=0):
    """Deterministic split by seeded shuffle; same seed, same split."""
    n = features.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    test, train = perm[:n_test], perm[n_test:]
    return features[train], labels[train], features[test], labels[test]
