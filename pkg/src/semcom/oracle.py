"""Analytic references for the sampler math and the consistency check.

A small linear-Gaussian world makes every quantity the pipeline
estimates available in closed form: the clean signal has a Gaussian
prior, the observation is linear with Gaussian noise, and the forward
kernel mixes both, so (x0, x_t, y) is jointly Gaussian and the exact
conditional mean E[x0 | x_t, y] follows from block covariances.

``consistency_experiment`` trains least-squares regressors of growing
sample count against that exact target: the MSE-optimal predictor is
the conditional mean, so the fitted map must home in on it as n grows.
``vanilla_ddpm_reference_step`` is a separately coded unconditional
reverse step used only to cross-check the production sampler in the
zero-conditioning regime; it recomputes its own cumulative products
from the raw beta ramp on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .schedule import DiffusionSchedule


@dataclass(frozen=True)
class LinearGaussianToy:
    """Gaussian prior, linear observation, shared diffusion schedule."""

    schedule: DiffusionSchedule
    mean0: np.ndarray
    cov0: np.ndarray
    obs_matrix: np.ndarray
    obs_noise_var: float

    def __post_init__(self):
        mean0 = np.atleast_1d(np.asarray(self.mean0, dtype=float))
        cov0 = np.atleast_2d(np.asarray(self.cov0, dtype=float))
        obs = np.atleast_2d(np.asarray(self.obs_matrix, dtype=float))
        d = mean0.size
        if cov0.shape != (d, d):
            raise ConfigError(f"cov0 {cov0.shape} does not match dim {d}")
        if obs.shape != (d, d):
            raise ConfigError("observation map must be square so the "
                              "observation can stand in for the condition")
        if not np.allclose(cov0, cov0.T):
            raise ConfigError("cov0 must be symmetric")
        try:
            np.linalg.cholesky(cov0)
        except np.linalg.LinAlgError:
            raise ConfigError("cov0 must be positive definite") from None
        if self.obs_noise_var < 0.0:
            raise ConfigError("obs_noise_var must be nonnegative")
        object.__setattr__(self, "mean0", mean0)
        object.__setattr__(self, "cov0", cov0)
        object.__setattr__(self, "obs_matrix", obs)

    @property
    def dim(self) -> int:
        return self.mean0.size

    def _kernel_coeffs(self, t: int):
        s = self.schedule
        s.check_step(t)
        sqrt_abar = float(np.sqrt(s.alpha_bar[t - 1]))
        w = float(s.w[t - 1])
        return (1.0 - w) * sqrt_abar, w * sqrt_abar, float(s.delta[t - 1])

    def joint_moments(self, t: int):
        """Mean and covariance blocks of (x0, x_t, y)."""
        a, b, delta = self._kernel_coeffs(t)
        d = self.dim
        A = self.obs_matrix
        s2 = self.obs_noise_var
        M = a * np.eye(d) + b * A
        cov_0y = self.cov0 @ A.T
        cov_0t = self.cov0 @ M.T
        cov_yy = A @ self.cov0 @ A.T + s2 * np.eye(d)
        cov_tt = M @ self.cov0 @ M.T + (b * b * s2 + delta) * np.eye(d)
        cov_ty = M @ self.cov0 @ A.T + b * s2 * np.eye(d)
        mean = {"x0": self.mean0, "x_t": M @ self.mean0,
                "y": A @ self.mean0}
        cov = {"0t": cov_0t, "0y": cov_0y, "tt": cov_tt,
               "ty": cov_ty, "yy": cov_yy}
        return mean, cov

    def sample_joint(self, n: int, t: int, rng: np.random.Generator):
        """Draw n iid triples (x0, y, x_t) from the generative model."""
        a, b, delta = self._kernel_coeffs(t)
        x0 = rng.multivariate_normal(self.mean0, self.cov0, size=n)
        noise = rng.standard_normal((n, self.dim))
        y = x0 @ self.obs_matrix.T + np.sqrt(self.obs_noise_var) * noise
        eps = rng.standard_normal((n, self.dim))
        x_t = a * x0 + b * y + np.sqrt(delta) * eps
        return x0, y, x_t


def _conditioning_blocks(toy: LinearGaussianToy, t: int):
    mean, cov = toy.joint_moments(t)
    d = toy.dim
    cross = np.hstack([cov["0t"], cov["0y"]])
    joint = np.block([[cov["tt"], cov["ty"]],
                      [cov["ty"].T, cov["yy"]]])
    z_mean = np.concatenate([mean["x_t"], mean["y"]])
    try:
        gain = np.linalg.solve(joint, cross.T).T
    except np.linalg.LinAlgError:
        raise NumericalError("joint covariance of (x_t, y) is singular; "
                             "cannot condition") from None
    return mean["x0"], z_mean, gain, cross


def analytic_posterior_mean(toy: LinearGaussianToy, x_t: np.ndarray,
                            y: np.ndarray, t: int) -> np.ndarray:
    """Closed-form E[x0 | x_t, y]; accepts (d,) or batched (n, d)."""
    single = np.asarray(x_t).ndim == 1
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x_t.shape != y.shape or x_t.shape[1] != toy.dim:
        raise ConfigError(f"x_t {x_t.shape} and y {y.shape} must both be "
                          f"(n, {toy.dim})")
    mean0, z_mean, gain, _ = _conditioning_blocks(toy, t)
    z = np.hstack([x_t, y])
    out = mean0 + (z - z_mean) @ gain.T
    return out[0] if single else out


def posterior_cov(toy: LinearGaussianToy, t: int) -> np.ndarray:
    """Cov[x0 | x_t, y]; constant across conditioning values."""
    _, _, gain, cross = _conditioning_blocks(toy, t)
    return toy.cov0 - gain @ cross.T


@dataclass(frozen=True)
class ConsistencyRecord:
    n: int
    mse: float
    converged: bool


def consistency_experiment(toy: LinearGaussianToy, n_list,
                           rng: np.random.Generator, t: int | None = None,
                           holdout: int = 2000):
    """Fit least-squares regressors at growing n; measure distance to
    the analytic conditional mean.

    The regressor is linear in (x_t, y, 1), which contains the exact
    conditional mean for this Gaussian world, so the fitted map has a
    unique population optimum and the reported held-out MSE must
    shrink toward zero as n grows.  Returns one record per n.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError(f"n_list must be strictly increasing: {n_list}")
    if t is None:
        t = max(1, toy.schedule.T // 2)
    x0_h, y_h, xt_h = toy.sample_joint(holdout, t, rng)
    target = analytic_posterior_mean(toy, xt_h, y_h, t)
    feats_h = np.hstack([xt_h, y_h, np.ones((holdout, 1))])
    records = []
    for n in n_list:
        x0, y, x_t = toy.sample_joint(n, t, rng)
        feats = np.hstack([x_t, y, np.ones((n, 1))])
        theta, _, rank, _ = np.linalg.lstsq(feats, x0, rcond=None)
        converged = rank == feats.shape[1]
        mse = float(np.mean((feats_h @ theta - target) ** 2))
        records.append(ConsistencyRecord(n=n, mse=mse, converged=converged))
    return records


def ols_excess_floor(toy: LinearGaussianToy, t: int, n: int) -> float:
    """Expected held-out MSE of the exact-form least-squares fit.

    With p features and homoscedastic residual covariance (the
    posterior covariance), the classical excess-risk scale is
    tr(posterior cov) * p / n, averaged per output coordinate here to
    match the per-element MSE convention of the experiment.
    """
    p = 2 * toy.dim + 1
    return float(np.trace(posterior_cov(toy, t)) * p / (n * toy.dim))


def default_toy(schedule: DiffusionSchedule | None = None) -> LinearGaussianToy:
    """The stock 2-D toy used by the consistency harness and tests.

    Correlated prior, a skewed observation map and moderate observation
    noise keep every conditioning term active (nothing degenerates to
    identity or independence).
    """
    from .schedule import build_schedule
    if schedule is None:
        schedule = build_schedule()
    return LinearGaussianToy(
        schedule=schedule,
        mean0=np.array([0.3, -0.2]),
        cov0=np.array([[0.5, 0.15], [0.15, 0.3]]),
        obs_matrix=np.array([[1.0, 0.25], [0.0, 0.9]]),
        obs_noise_var=0.2,
    )


def vanilla_ddpm_reference_step(x_t: np.ndarray, eps_hat: np.ndarray,
                                t: int, schedule: DiffusionSchedule,
                                rng: np.random.Generator | None = None
                                ) -> np.ndarray:
    """Plain unconditional reverse step, coded from the beta ramp alone.

    mean = (x_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t),
    plus sqrt(beta_t) noise when an rng is given and t > 1.  Only valid
    against schedules whose conditioning weights are all zero.
    """
    if np.any(schedule.w != 0.0):
        raise ConfigError("reference step requires a conditioning-free "
                          "schedule (w identically zero)")
    schedule.check_step(t)
    beta = schedule.beta
    alpha_t = 1.0 - float(beta[t - 1])
    abar_t = float(np.prod(1.0 - beta[:t]))
    mean = (np.asarray(x_t, dtype=float)
            - float(beta[t - 1]) / np.sqrt(1.0 - abar_t)
            * np.asarray(eps_hat, dtype=float)) / np.sqrt(alpha_t)
    if rng is None or t == 1:
        return mean
    return mean + np.sqrt(float(beta[t - 1])) * rng.standard_normal(mean.shape)
