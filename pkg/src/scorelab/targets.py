"""Target distributions with closed-form noised scores.

Under the OU forward process ``dx = -x dt + sqrt(2) dB`` a target ``pi``
is carried to ``p_t = law(e^{-t} x_0 + sigma_t xi)``.  For the two target
families here ``p_t`` stays in the family, so scores, Hessians and all
Tweedie-derived conditional moments are available exactly:

* ``GaussianTarget``: zero-mean ``N(0, Sigma)``, ``Sigma_t = e^{-2t} Sigma + sigma_t^2 I``.
* ``GmmTarget``: isotropic mixture; component ``k`` at time ``t`` has mean
  ``e^{-t} mu_k`` and variance ``e^{-2t} v_k + sigma_t^2``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from scorelab import rng as rngmod
from scorelab.errors import ConfigError, SingularDesignError

MAX_CONDITION = 1e12


def _sigma_sq(t):
    return -np.expm1(-2.0 * np.asarray(t, dtype=float))


@dataclass(frozen=True, eq=False)
class GaussianTarget:
    """Zero-mean Gaussian ``N(0, sigma)``."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float)
        if s.ndim == 0:
            s = s.reshape(1, 1)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ConfigError(f"covariance must be square, got shape {s.shape}")
        if not np.allclose(s, s.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(s).max())):
            raise ConfigError("covariance is not symmetric")
        s = 0.5 * (s + s.T)
        eig = np.linalg.eigvalsh(s)
        if eig[0] <= 0:
            raise ConfigError(f"covariance is not positive definite (min eigenvalue {eig[0]:.3g})")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def d(self):
        return self.sigma.shape[0]

    @property
    def kind(self):
        return "gaussian"


@dataclass(frozen=True, eq=False)
class GmmTarget:
    """Mixture of isotropic Gaussians ``sum_k w_k N(mu_k, v_k I)``.

    Zero variances are allowed (point masses); such a target has no score at
    ``t = 0``.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        var = np.array(self.variances, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ConfigError("gmm needs at least one component mean")
        k = means.shape[0]
        if var.shape != (k,) or w.shape != (k,):
            raise ConfigError(f"gmm has {k} means but {var.size} variances and {w.size} weights")
        if np.any(w <= 0):
            raise ConfigError("gmm weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"gmm weights must sum to 1, got {w.sum():.15g}")
        if np.any(var < 0):
            raise ConfigError("gmm variances must be nonnegative")
        for a in (means, var, w):
            a.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "weights", w)

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def kind(self):
        return "gmm"


def target_to_dict(target):
    if isinstance(target, GaussianTarget):
        return {"kind": "gaussian", "sigma": target.sigma.tolist()}
    return {
        "kind": "gmm",
        "means": target.means.tolist(),
        "variances": target.variances.tolist(),
        "weights": target.weights.tolist(),
    }


def target_from_dict(obj):
    """Inverse of :func:`target_to_dict`."""
    kind = obj.get("kind")
    if kind == "gaussian":
        return GaussianTarget(np.asarray(obj["sigma"], dtype=float))
    if kind == "gmm":
        return GmmTarget(obj["means"], obj["variances"], obj["weights"])
    raise ConfigError(f"unknown target kind {kind!r}")


def random_spd(d, rng, low=1.0, high=2.0):
    """``Q diag(lam) Q^T`` with ``Q`` the eigenvectors of a GOE draw and ``lam ~ U(low, high)``."""
    a = rng.standard_normal((d, d))
    _, q = np.linalg.eigh((a + a.T) / np.sqrt(2 * d))
    lam = rng.uniform(low, high, size=d)
    s = (q * lam) @ q.T
    return 0.5 * (s + s.T)


def lowrank_covariance(d, rng, scale=5.0):
    """``scale (M M^T + v v^T)`` with standard normal ``M`` (d x d) and ``v`` (d)."""
    m = rng.standard_normal((d, d))
    v = rng.standard_normal((d, 1))
    s = scale * (m @ m.T + v @ v.T)
    return 0.5 * (s + s.T)


def sample_target(target, m, seed):
    """Draw ``m`` i.i.d. samples from ``target`` as an ``(m, d)`` array.

    Samples come in blocks of :data:`scorelab.rng.BLOCK` rows, each from its
    own seed stream, so the first rows do not depend on ``m``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    d = target.d
    if isinstance(target, GaussianTarget):
        chol = np.linalg.cholesky(target.sigma)

        def draw(gen, b):
            return gen.standard_normal((b, d)) @ chol.T

    else:
        means, sd, w = target.means, np.sqrt(target.variances), target.weights

        def draw(gen, b):
            labels = gen.choice(len(w), size=b, p=w)
            return means[labels] + sd[labels, None] * gen.standard_normal((b, d))

    return rngmod.blockwise(m, seed, "target", draw)


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got {x2.shape[-1]}")
    return x2, single


@dataclass(eq=False)
class ScoreOracle:
    """Exact score / Hessian / Tweedie moments of the noised target.

    Read-only after construction; per-time factorizations are memoized and
    may be precomputed for a grid via ``grid``.  Every method accepts a
    single point ``(d,)`` or a batch ``(n, d)``.
    """

    target: object
    grid: object = None
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.grid is not None:
            for t in np.asarray(self.grid, dtype=float).ravel():
                self._factor(float(t))

    @property
    def d(self):
        return self.target.d

    @property
    def is_gaussian(self):
        return isinstance(self.target, GaussianTarget)

    # -- Gaussian internals -------------------------------------------------

    def noised_covariance(self, t):
        """``Sigma_t`` for a Gaussian target."""
        self._require_gaussian()
        return np.exp(-2.0 * t) * self.target.sigma + _sigma_sq(t) * np.eye(self.d)

    def precision(self, t):
        """``Sigma_t^{-1}`` via a Cholesky solve."""
        self._require_gaussian()
        return self._factor(float(t))[1]

    def _factor(self, t):
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        if not self.is_gaussian:
            return None
        cov = self.noised_covariance(t)
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
            raise SingularDesignError(f"Sigma_t at t={t} has condition number above {MAX_CONDITION:g}")
        cf = linalg.cho_factor(cov)
        prec = linalg.cho_solve(cf, np.eye(self.d))
        prec = 0.5 * (prec + prec.T)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        self._cache[t] = (cov, prec, logdet)
        return self._cache[t]

    def _require_gaussian(self):
        if not self.is_gaussian:
            raise TypeError("operation is only defined for Gaussian targets")

    # -- mixture internals --------------------------------------------------

    def _components(self, t):
        a = np.exp(-t) * self.target.means
        s = np.exp(-2.0 * t) * self.target.variances + _sigma_sq(t)
        if np.any(s <= 0):
            raise ValueError(f"score of a point-mass component is undefined at t={t}")
        return a, s

    def _responsibilities(self, t, x):
        a, s = self._components(t)
        d = self.d
        diff = x[:, None, :] - a[None, :, :]  # (n, K, d)
        logc = (
            np.log(self.target.weights)[None, :]
            - 0.5 * d * np.log(2.0 * np.pi * s)[None, :]
            - 0.5 * np.sum(diff**2, axis=-1) / s[None, :]
        )
        top = logc.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.sum(np.exp(logc - top), axis=1))
        r = np.exp(logc - lse[:, None])
        g = -diff / s[None, :, None]  # per-component scores
        return r, g, s, lse

    # -- public API ---------------------------------------------------------

    def log_density(self, t, x):
        """``log p_t(x)``."""
        x2, single = _as_batch(x, self.d)
        if self.is_gaussian:
            _, prec, logdet = self._factor(float(t))
            out = -0.5 * np.einsum("ni,ij,nj->n", x2, prec, x2) - 0.5 * (
                self.d * np.log(2.0 * np.pi) + logdet
            )
        else:
            out = self._responsibilities(float(t), x2)[3]
        return out[0] if single else out

    def score(self, t, x):
        """``grad log p_t(x)``."""
        x2, single = _as_batch(x, self.d)
        if self.is_gaussian:
            out = -x2 @ self.precision(t)
        else:
            r, g, _, _ = self._responsibilities(float(t), x2)
            out = np.einsum("nk,nkd->nd", r, g)
        return out[0] if single else out

    __call__ = score

    def hessian(self, t, x):
        """``grad^2 log p_t(x)``, shape ``(d, d)`` or ``(n, d, d)``."""
        x2, single = _as_batch(x, self.d)
        d = self.d
        if self.is_gaussian:
            out = np.broadcast_to(-self.precision(t), (x2.shape[0], d, d)).copy()
        else:
            r, g, s, _ = self._responsibilities(float(t), x2)
            gbar = np.einsum("nk,nkd->nd", r, g)
            second = np.einsum("nk,nki,nkj->nij", r, g, g)
            iso = np.einsum("nk,k->n", r, 1.0 / s)
            out = second - iso[:, None, None] * np.eye(d) - gbar[:, :, None] * gbar[:, None, :]
        return out[0] if single else out

    def posterior_mean_x0(self, t, x_t):
        """``E[x_0 | x_t] = e^t (x_t + sigma_t^2 s(t, x_t))``; identity at ``t = 0``."""
        x_t = np.asarray(x_t, dtype=float)
        if t == 0:
            return x_t.copy()
        return np.exp(t) * (x_t + _sigma_sq(t) * self.score(t, x_t))

    def conditional_noise_covariance(self, t, t_prev, x_t):
        """``E[z z^T | x_t]`` for ``z = x_t - e^{-(t-t_prev)} x_{t_prev}``.

        Second-order Tweedie: ``sd^4 h_t + sd^4 s s^T + sd^2 I`` with
        ``sd^2 = 1 - e^{-2(t - t_prev)}``.
        """
        if not t_prev < t:
            raise ValueError(f"need t_prev < t, got t_prev={t_prev}, t={t}")
        v = _sigma_sq(t - t_prev)
        s = self.score(t, x_t)
        h = self.hessian(t, x_t)
        ss = s[..., :, None] * s[..., None, :]
        return v**2 * h + v**2 * ss + v * np.eye(self.d)

    def sample_backward(self, t_prev, t, x_t, gen):
        """Draw ``x_{t_prev} | x_t`` for each row of ``x_t`` (``t_prev = 0`` gives ``x_0``).

        Exact for both families: the OU transition is linear-Gaussian, so the
        backward conditional is Gaussian (Gaussian target) or a Gaussian
        mixture whose components are conditioned separately.
        """
        if not 0 <= t_prev < t:
            raise ValueError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
        x2, single = _as_batch(x_t, self.d)
        n, d = x2.shape
        decay = np.exp(-(t - t_prev))
        v = _sigma_sq(t - t_prev)
        if self.is_gaussian:
            prev_cov = self.target.sigma if t_prev == 0 else self._factor(float(t_prev))[0]
            prec_t = self.precision(t)
            gain = decay * prev_cov @ prec_t  # (d, d)
            mean = x2 @ gain.T
            cov = prev_cov - decay * gain @ prev_cov
            cov = 0.5 * (cov + cov.T)
            w, u = np.linalg.eigh(cov)
            root = u * np.sqrt(np.clip(w, 0.0, None))
            out = mean + gen.standard_normal((n, d)) @ root.T
        else:
            a = np.exp(-t_prev) * self.target.means
            s = np.exp(-2.0 * t_prev) * self.target.variances + _sigma_sq(t_prev)
            pred_var = decay**2 * s + v  # variance of x_t under component k
            diff = x2[:, None, :] - decay * a[None, :, :]
            logc = (
                np.log(self.target.weights)[None, :]
                - 0.5 * d * np.log(pred_var)[None, :]
                - 0.5 * np.sum(diff**2, axis=-1) / pred_var[None, :]
            )
            logc -= logc.max(axis=1, keepdims=True)
            p = np.exp(logc)
            p /= p.sum(axis=1, keepdims=True)
            u = gen.random(n)
            labels = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), len(s) - 1)
            gain = decay * s / pred_var
            post_mean = a[labels] + gain[labels, None] * diff[np.arange(n), labels]
            post_var = s * v / pred_var
            out = post_mean + np.sqrt(post_var[labels])[:, None] * gen.standard_normal((n, d))
        return out[0] if single else out

    def sample_marginal(self, t, n, seed):
        """``n`` draws from ``p_t`` (fresh, independent of any dataset)."""
        x0 = sample_target(self.target, n, seed)
        noise = rngmod.blockwise(n, seed, "mc", lambda g, b: g.standard_normal((b, self.d)))
        return np.exp(-t) * x0 + np.sqrt(_sigma_sq(t)) * noise

    def lipschitz(self, t):
        """Exact Lipschitz constant of ``s(t, .)`` for a Gaussian target: ``||Sigma_t^{-1}||_op``."""
        return float(np.linalg.eigvalsh(self.precision(t))[-1])

    def schedule_lipschitz(self, times):
        """``max_j ||Sigma_{t_j}^{-1}||_op`` over a grid."""
        return max(self.lipschitz(float(t)) for t in np.asarray(times).ravel())
