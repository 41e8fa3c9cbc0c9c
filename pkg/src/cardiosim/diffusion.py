"""Diffusion mathematics: schedules, forward marginal, exact posterior,
clean/noise conversions, ancestral sampling, energy-guided Langevin
sampling, and numerical verification of the three theory claims on
analytic Gaussian test beds.

Conventions: tau runs 1..N for noising steps, alpha_bar has alpha_bar[0]=1
prepended so index tau reads off the closed form directly. The reverse
process uses the exact posterior variance beta_tilde (zero at tau=1).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .codec import LatentState
from .nn import DivergenceError


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule: beta in (0,1), alpha = 1-beta, alpha_bar cumulative
    with alpha_bar[0] = 1."""

    betas: np.ndarray
    kind: str = "linear"

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)

    @property
    def n_steps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def check_tau(self, tau: int, lo: int = 1) -> None:
        if not (lo <= tau <= self.n_steps):
            raise ValueError(f"tau={tau} outside [{lo}, {self.n_steps}]")


def build_schedule(kind: str, n_steps: int, beta_min: float = 1e-4,
                   beta_max: float = 0.02) -> NoiseSchedule:
    """Linear: evenly spaced betas. Cosine: squared-cosine alpha_bar profile
    with betas clipped into [beta_min, beta_max]."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, n_steps)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(n_steps + 1)
        f = np.cos(((steps / n_steps) + s) / (1.0 + s) * math.pi / 2.0) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], beta_min, beta_max)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas, kind=kind)


@dataclass(frozen=True)
class DiffusionSample:
    """An intermediate reverse-process state with its conditioning context."""

    z_tau: np.ndarray
    tau: int
    conditioning: object = None

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


def forward_sample(z0: np.ndarray, tau: int, eps: np.ndarray,
                   schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal draw:
    z_tau = sqrt(abar_tau) z0 + sqrt(1 - abar_tau) eps."""
    schedule.check_tau(tau, lo=0)
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError("z0 and eps must share a shape")
    abar = schedule.alpha_bars[tau]
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * eps


def posterior_params(z_tau: np.ndarray, z0_hat: np.ndarray, tau: int,
                     schedule: NoiseSchedule) -> tuple[np.ndarray, float]:
    """Exact reverse posterior (mean, scalar variance) at step tau >= 1:

        var  = (1 - abar_{tau-1}) / (1 - abar_tau) * beta_tau
        mean = sqrt(abar_{tau-1}) beta_tau / (1 - abar_tau) * z0_hat
             + sqrt(alpha_tau) (1 - abar_{tau-1}) / (1 - abar_tau) * z_tau
    """
    schedule.check_tau(tau)
    abar = schedule.alpha_bars
    beta = schedule.betas[tau - 1]
    alpha = schedule.alphas[tau - 1]
    denom = 1.0 - abar[tau]
    var = (1.0 - abar[tau - 1]) / denom * beta
    coef0 = math.sqrt(abar[tau - 1]) * beta / denom
    coef_t = math.sqrt(alpha) * (1.0 - abar[tau - 1]) / denom
    mean = coef0 * np.asarray(z0_hat, dtype=np.float64) \
        + coef_t * np.asarray(z_tau, dtype=np.float64)
    return mean, float(var)


def eps_to_z0(z_tau: np.ndarray, eps_hat: np.ndarray, tau: int,
              schedule: NoiseSchedule) -> np.ndarray:
    """z0_hat = (z_tau - sqrt(1 - abar_tau) eps_hat) / sqrt(abar_tau)."""
    schedule.check_tau(tau)
    abar = schedule.alpha_bars[tau]
    return (np.asarray(z_tau) - math.sqrt(1.0 - abar) * np.asarray(eps_hat)) / math.sqrt(abar)


def z0_to_eps(z_tau: np.ndarray, z0_hat: np.ndarray, tau: int,
              schedule: NoiseSchedule) -> np.ndarray:
    """Algebraic inverse of eps_to_z0."""
    schedule.check_tau(tau)
    abar = schedule.alpha_bars[tau]
    return (np.asarray(z_tau) - math.sqrt(abar) * np.asarray(z0_hat)) / math.sqrt(1.0 - abar)


def ancestral_sample(denoiser, conditioning, schedule: NoiseSchedule,
                     seed: int, dim: int) -> LatentState:
    """Reverse-process draw: start from a standard Gaussian z_N and walk
    tau = N..1 through the learned transition with the exact posterior
    variance (zero noise at the final step, where it vanishes).

    `denoiser(z_tau, tau, conditioning)` must return the clean-latent
    prediction. Deterministic given the seed. A non-finite intermediate
    state aborts with step diagnostics.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(dim)
    for tau in range(schedule.n_steps, 0, -1):
        z0_hat = np.asarray(denoiser(z, tau, conditioning), dtype=np.float64)
        mean, var = posterior_params(z, z0_hat, tau, schedule)
        if var > 0.0:
            z = mean + math.sqrt(var) * rng.standard_normal(dim)
        else:
            z = mean
        if not np.all(np.isfinite(z)):
            raise DivergenceError(
                f"ancestral sampling diverged at tau={tau}, |z|={np.linalg.norm(z)}")
    return LatentState(z=z)


def langevin_sample(score, grad_energy, gamma: float, step_size: float,
                    n_steps: int, init: np.ndarray, seed: int,
                    energy=None, divergence_bound: float = 1e6) -> np.ndarray:
    """Euler-Maruyama chain for dz = (score(z) - gamma * grad_energy(z)) dt
    + sqrt(2) dW. Returns the full chain, shape (n_steps + 1, dim)."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    z = np.asarray(init, dtype=np.float64).reshape(-1).copy()
    dim = z.size
    rng = np.random.default_rng(seed)
    chain = np.empty((n_steps + 1, dim))
    chain[0] = z
    scale = math.sqrt(2.0 * step_size)
    block = 65536
    drawn = 0
    noise = rng.standard_normal((min(block, n_steps), dim))
    for t in range(n_steps):
        if drawn == noise.shape[0]:
            noise = rng.standard_normal((min(block, n_steps - t), dim))
            drawn = 0
        drift = score(z) - gamma * grad_energy(z)
        z = z + step_size * drift + scale * noise[drawn]
        drawn += 1
        if float(np.max(np.abs(z))) > divergence_bound:
            e_txt = f", energy={energy(z)}" if energy is not None else ""
            raise DivergenceError(f"langevin chain diverged at step {t}{e_txt}")
        chain[t + 1] = z
    return chain


# ---------------------------------------------------------------------------
# Gaussian test beds and proposition verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianTestBed:
    """Diagonal Gaussian base tilted by the quadratic energy ||z - m||^2.

    The tilt stays Gaussian: completing the square gives
        var*  = var / (1 + 2 gamma var)
        mean* = (mean + 2 gamma var m) / (1 + 2 gamma var)
    per coordinate.
    """

    base_mean: np.ndarray
    base_var: np.ndarray
    anchor: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.base_mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.base_var, dtype=np.float64))
        anchor = np.atleast_1d(np.asarray(self.anchor, dtype=np.float64))
        if not (mean.shape == var.shape == anchor.shape):
            raise ValueError("mean, var and anchor must share a shape")
        if np.any(var <= 0):
            raise ValueError("base variances must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        object.__setattr__(self, "base_mean", mean)
        object.__setattr__(self, "base_var", var)
        object.__setattr__(self, "anchor", anchor)

    @property
    def dim(self) -> int:
        return self.base_mean.size

    @property
    def tilted_var(self) -> np.ndarray:
        return self.base_var / (1.0 + 2.0 * self.gamma * self.base_var)

    @property
    def tilted_mean(self) -> np.ndarray:
        scale = 1.0 + 2.0 * self.gamma * self.base_var
        return (self.base_mean + 2.0 * self.gamma * self.base_var * self.anchor) / scale

    def base_score(self, z: np.ndarray) -> np.ndarray:
        return (self.base_mean - z) / self.base_var

    def tilted_score(self, z: np.ndarray) -> np.ndarray:
        return (self.tilted_mean - z) / self.tilted_var

    def energy(self, z: np.ndarray) -> float:
        d = np.asarray(z) - self.anchor
        return float(np.dot(d, d))

    def grad_energy(self, z: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(z) - self.anchor)


@dataclass(frozen=True)
class VerifyBudget:
    langevin_steps: int = 1_000_000
    burn_in: int = 50_000
    step_size: float = 0.01
    grid_points: int = 81
    bins: int = 60
    tv_threshold: float = 0.05
    p2_tolerance: float = 1e-8
    seed: int = 0
    time_limit_s: float = 110.0


def _gibbs_objective(m1: np.ndarray, s1sq: np.ndarray, mu0: float, s0sq: float,
                     m: float, gamma: float) -> np.ndarray:
    """Per-coordinate J(q) = KL(q || base) + gamma E_q[(z - m)^2] for the
    Gaussian family q = N(m1, s1sq)."""
    kl = 0.5 * np.log(s0sq / s1sq) + (s1sq + (m1 - mu0) ** 2) / (2.0 * s0sq) - 0.5
    return kl + gamma * (s1sq + (m1 - m) ** 2)


def verify_propositions(bed: GaussianTestBed, budget: VerifyBudget | None = None) -> dict:
    """Numerical verification of the three theory claims on the test bed.

    P1: a grid search over diagonal Gaussians confirms the free-energy
        objective is minimized at the analytic tilted parameters (within one
        grid cell per axis).
    P2: the tilted score equals base score minus gamma times the energy
        gradient, pointwise on a grid.
    P3: a long Langevin chain's per-coordinate histogram matches the tilted
        density (normalized by grid quadrature) in total variation.
    """
    budget = budget or VerifyBudget()
    t_start = time.time()
    report: dict = {"gamma": bed.gamma, "seed": budget.seed}

    # -- P1: variational free-energy argmin ---------------------------------
    p1_argmin, p1_analytic, p1_cells, p1_ok = [], [], [], True
    for i in range(bed.dim):
        mu0, s0sq, m = bed.base_mean[i], bed.base_var[i], bed.anchor[i]
        mean_lo = min(mu0, m) - 1.0
        mean_hi = max(mu0, m) + 1.0
        means = np.linspace(mean_lo, mean_hi, budget.grid_points)
        varis = np.linspace(0.02, s0sq + 0.5, budget.grid_points)
        mg, vg = np.meshgrid(means, varis, indexing="ij")
        j = _gibbs_objective(mg, vg, mu0, s0sq, m, bed.gamma)
        best = np.unravel_index(np.argmin(j), j.shape)
        got = (float(means[best[0]]), float(varis[best[1]]))
        want = (float(bed.tilted_mean[i]), float(bed.tilted_var[i]))
        cell = (float(means[1] - means[0]), float(varis[1] - varis[0]))
        p1_argmin.append(got)
        p1_analytic.append(want)
        p1_cells.append(cell)
        p1_ok &= abs(got[0] - want[0]) <= cell[0] and abs(got[1] - want[1]) <= cell[1]
    report["p1"] = {"argmin": p1_argmin, "analytic": p1_analytic,
                    "grid_cell": p1_cells, "pass": bool(p1_ok)}

    # -- P2: additive score decomposition ------------------------------------
    max_err = 0.0
    for i in range(bed.dim):
        sd = math.sqrt(bed.tilted_var[i])
        zs = np.linspace(bed.tilted_mean[i] - 5 * sd, bed.tilted_mean[i] + 5 * sd, 501)
        for z_i in zs:
            z = bed.tilted_mean.copy()
            z[i] = z_i
            lhs = bed.tilted_score(z)
            rhs = bed.base_score(z) - bed.gamma * bed.grad_energy(z)
            max_err = max(max_err, float(np.max(np.abs(lhs - rhs))))
    report["p2"] = {"max_abs_err": max_err, "pass": bool(max_err < budget.p2_tolerance)}

    # -- P3: Langevin stationarity vs quadrature of the tilted density -------
    try:
        chain = langevin_sample(bed.base_score, bed.grad_energy, bed.gamma,
                                budget.step_size, budget.langevin_steps,
                                init=bed.base_mean.copy(), seed=budget.seed)
    except DivergenceError as exc:
        report["p3"] = {"tv_distance": None, "pass": False, "error": str(exc)}
        report["pass"] = False
        report["elapsed_s"] = time.time() - t_start
        return report
    samples = chain[budget.burn_in:]
    tvs = []
    for i in range(bed.dim):
        sd = math.sqrt(bed.tilted_var[i])
        lo = bed.tilted_mean[i] - 5 * sd
        hi = bed.tilted_mean[i] + 5 * sd
        edges = np.linspace(lo, hi, budget.bins + 1)
        counts, _ = np.histogram(samples[:, i], bins=edges)
        empirical = counts / counts.sum()
        # independent oracle: normalize base * exp(-gamma E) by quadrature
        fine = np.linspace(lo, hi, budget.bins * 20 + 1)
        log_density = (-0.5 * (fine - bed.base_mean[i]) ** 2 / bed.base_var[i]
                       - bed.gamma * (fine - bed.anchor[i]) ** 2)
        density = np.exp(log_density - np.max(log_density))
        cdf = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) / 2.0
                                               * np.diff(fine))])
        cdf /= cdf[-1]
        mass = np.diff(np.interp(edges, fine, cdf))
        tvs.append(0.5 * float(np.sum(np.abs(empirical - mass / mass.sum()))))
    tv = max(tvs)
    elapsed = time.time() - t_start
    exhausted = elapsed > budget.time_limit_s
    report["p3"] = {"tv_distance": tv, "pass": bool(tv < budget.tv_threshold),
                    "budget_exhausted": bool(exhausted)}
    report["pass"] = bool(report["p1"]["pass"] and report["p2"]["pass"]
                          and report["p3"]["pass"] and not exhausted)
    report["elapsed_s"] = elapsed
    return report
