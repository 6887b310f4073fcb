"""Gaussian-Process dictionary model with a Beta-Bernoulli support and its Gibbs sampler.

Each training spectrum is modelled as ``y_i = Phi (z_i * s_i) + eps`` where
every atom ``phi_k`` carries a GP prior ``N(mu_k0, R / eta_k)`` with the
exponential kernel ``R[a, b] = exp(-|a - b| / (2 l^2))``. Binary supports
``z_ik ~ Bern(pi_k)`` with ``pi_k ~ Beta(c0/Q, d0 (Q-1)/Q)``, weights
``s_ik ~ N(mu_s_ik, 1/lambda_s)`` and Gamma hyper-priors on ``eta_k``,
``lambda_s`` and the noise precision ``lambda_eps``.

Every ``*_conditional`` function returns the parameters of the exact full
conditional; the matching ``sample_*`` function draws from it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .core import NumericalError
from .priors import PriorFactorization

logger = logging.getLogger(__name__)

TINY = np.finfo(np.float64).tiny
PI_EPS = np.finfo(np.float64).eps
LOG_XI_CLAMP = 700.0
JITTER = 1e-10


@dataclass(frozen=True)
class ModelConfig:
    a_o: float = 1e-6
    b_o: float = 1e-6
    c_o: float = 1e-6
    d_o: float = 1e-6
    e_o: float = 1e-6
    f_o: float = 1e-6
    g_o: float = 1e-6
    h_o: float = 1e-6
    lambda_eps_o: float = 1e6
    lambda_s_o: float = 1e6
    Q: int | None = None  # None: number of atoms in the cluster
    length_scale: float = 3.0
    gibbs_iters: int = 500
    burn_in: int = 250
    seed: int = 0
    kernel_distance: str = "channel"  # channel | nm
    eta_quadratic: str = "precision"  # precision | literal
    s_prior_precision: str = "sampled"  # sampled | fixed
    eta_init: float = 1.0

    def __post_init__(self):
        for name in ("a_o", "b_o", "c_o", "d_o", "e_o", "f_o", "g_o", "h_o",
                     "lambda_eps_o", "lambda_s_o", "eta_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.length_scale < 0:
            raise ValueError("length_scale must be non-negative")
        if self.gibbs_iters < 1 or not 0 <= self.burn_in < self.gibbs_iters:
            raise ValueError("need gibbs_iters >= 1 and 0 <= burn_in < gibbs_iters")
        if self.Q is not None and self.Q < 1:
            raise ValueError("Q must be positive")
        if self.kernel_distance not in ("channel", "nm"):
            raise ValueError(f"unknown kernel_distance {self.kernel_distance!r}")
        if self.eta_quadratic not in ("precision", "literal"):
            raise ValueError(f"unknown eta_quadratic {self.eta_quadratic!r}")
        if self.s_prior_precision not in ("sampled", "fixed"):
            raise ValueError(f"unknown s_prior_precision {self.s_prior_precision!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


class KernelMatrix:
    """Correlation matrix R of the exponential GP kernel, factorized once.

    A length scale of 0 gives the identity (uncorrelated channels).
    """

    def __init__(self, R: np.ndarray):
        R = np.asarray(R, dtype=np.float64)
        if not np.array_equal(R, R.T):
            raise ValueError("kernel matrix must be exactly symmetric")
        try:
            self.chol = cho_factor(R, lower=True)
        except LinAlgError as exc:
            raise NumericalError("kernel matrix is not positive definite") from exc
        self.R = R
        self.inv = cho_solve(self.chol, np.eye(R.shape[0]))
        self.inv = 0.5 * (self.inv + self.inv.T)
        self.logdet = 2.0 * float(np.log(np.diag(self.chol[0])).sum())

    @property
    def size(self) -> int:
        return self.R.shape[0]

    @classmethod
    def build(cls, n_bands: int, length_scale: float = 3.0, distance: str = "channel",
              wavelengths=None) -> "KernelMatrix":
        if distance == "nm":
            if wavelengths is None:
                raise ValueError("nm kernel distance needs a wavelength grid")
            pos = np.asarray(wavelengths, dtype=np.float64)
        else:
            pos = np.arange(n_bands, dtype=np.float64)
        if length_scale == 0:
            return cls(np.eye(n_bands))
        dist = np.abs(pos[:, None] - pos[None, :])
        return cls(np.exp(-dist / (2.0 * length_scale ** 2)))


@dataclass
class GibbsState:
    Phi: np.ndarray        # (L, K) atoms
    Z: np.ndarray          # (K, N) binary support
    S: np.ndarray          # (K, N) weights
    pi: np.ndarray         # (K,)
    eta: np.ndarray        # (K,)
    lambda_s: float
    lambda_eps: float
    mu_phi: np.ndarray     # (L, K) prior means of the atoms
    mu_s: np.ndarray       # (K, N) prior means of the weights

    @property
    def n_atoms(self) -> int:
        return self.Phi.shape[1]

    @property
    def n_samples(self) -> int:
        return self.Z.shape[1]

    def copy(self) -> "GibbsState":
        return GibbsState(self.Phi.copy(), self.Z.copy(), self.S.copy(), self.pi.copy(),
                          self.eta.copy(), self.lambda_s, self.lambda_eps,
                          self.mu_phi, self.mu_s)

    @classmethod
    def initial(cls, priors: PriorFactorization, config: ModelConfig) -> "GibbsState":
        """Atoms at their prior means, weights at their prior means, support where
        the prior weights are non-zero, pi = 0.5, precisions at their prior values."""
        K = priors.D.shape[1]
        return cls(
            Phi=priors.D.astype(np.float64).copy(),
            Z=(priors.A > 0).astype(np.float64),
            S=priors.A.astype(np.float64).copy(),
            pi=np.full(K, 0.5),
            eta=np.full(K, config.eta_init),
            lambda_s=config.lambda_s_o,
            lambda_eps=config.lambda_eps_o,
            mu_phi=priors.D.astype(np.float64).copy(),
            mu_s=priors.A.astype(np.float64).copy(),
        )


@dataclass
class PosteriorSummary:
    Phi_mean: np.ndarray
    usage: np.ndarray
    lambda_eps: float
    n_samples: int
    trace: dict = field(default_factory=dict)


def _q(config: ModelConfig, K: int) -> int:
    return config.Q if config.Q is not None else K


def _s_precision_prior(state: GibbsState, config: ModelConfig) -> float:
    return state.lambda_s if config.s_prior_precision == "sampled" else config.lambda_s_o


def _gamma(rng, shape, rate):
    return max(float(rng.gamma(shape, 1.0 / rate)), TINY)


# ---------------------------------------------------------------------------
# residuals


def reconstruction_error(state: GibbsState, Y: np.ndarray) -> np.ndarray:
    """E = Y - Phi (Z * S), shape (L, N)."""
    return Y - state.Phi @ (state.Z * state.S)


def residual(i: int, k: int, state: GibbsState, Y: np.ndarray) -> np.ndarray:
    """Part of y_i left for atom k: y_i - Phi alpha_i + phi_k alpha_ik."""
    alpha = state.Z[:, i] * state.S[:, i]
    return Y[:, i] - state.Phi @ alpha + state.Phi[:, k] * alpha[k]


# ---------------------------------------------------------------------------
# full conditionals


def _phi_system(k, state, Y, kernel, E):
    if E is None:
        E = reconstruction_error(state, Y)
    alpha = state.Z[k] * state.S[k]
    Rk = E + np.outer(state.Phi[:, k], alpha)
    prior_prec = state.eta[k] * kernel.inv
    # the summed data precision is a scalar multiple of the identity
    prec = prior_prec + state.lambda_eps * float(alpha @ alpha) * np.eye(kernel.size)
    rhs = state.lambda_eps * (Rk @ alpha) + prior_prec @ state.mu_phi[:, k]
    return prec, rhs


def phi_conditional(k, state, Y, kernel: KernelMatrix, E=None):
    """Mean and covariance of phi_k given everything else.

    ``E`` may carry the current reconstruction error to avoid recomputing it.
    """
    prec, rhs = _phi_system(k, state, Y, kernel, E)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return cov @ rhs, cov


def eta_conditional(k, state, kernel: KernelMatrix, config: ModelConfig):
    """(shape, rate) of the Gamma conditional for the kernel precision eta_k."""
    dev = state.Phi[:, k] - state.mu_phi[:, k]
    M = kernel.inv if config.eta_quadratic == "precision" else kernel.R
    return config.a_o + 0.5 * kernel.size, config.b_o + 0.5 * float(dev @ M @ dev)


def z_conditional(i, k, state, Y) -> float:
    """P(z_ik = 1 | rest)."""
    r = residual(i, k, state, Y)
    phi = state.Phi[:, k]
    s = state.S[k, i]
    log_xi = -0.5 * state.lambda_eps * (phi @ phi * s * s - 2.0 * s * (r @ phi))
    log_xi = min(max(log_xi, -LOG_XI_CLAMP), LOG_XI_CLAMP)
    p = state.pi[k]
    xi = np.exp(log_xi)
    return float(p * xi / (1.0 - p + xi * p))


def s_conditional(i, k, state, Y, config: ModelConfig):
    """(mean, precision) of the Gaussian conditional for s_ik."""
    r = residual(i, k, state, Y)
    phi = state.Phi[:, k]
    z = state.Z[k, i]
    prior = _s_precision_prior(state, config)
    prec = prior + state.lambda_eps * z * z * float(phi @ phi)
    mean = (state.lambda_eps * z * float(phi @ r) + prior * state.mu_s[k, i]) / prec
    return mean, prec


def pi_conditional(k, state, config: ModelConfig):
    """(a, b) of the Beta conditional for pi_k."""
    Q = _q(config, state.n_atoms)
    n_on = float(state.Z[k].sum())
    return config.c_o / Q + n_on, config.d_o * (Q - 1) / Q + state.n_samples - n_on


def lambda_s_conditional(state, config: ModelConfig):
    dev = state.S - state.mu_s
    return (0.5 * state.n_samples * state.n_atoms + config.e_o,
            0.5 * float((dev * dev).sum()) + config.f_o)


def lambda_eps_conditional(state, Y, config: ModelConfig, E=None):
    if E is None:
        E = reconstruction_error(state, Y)
    L = Y.shape[0]
    return 0.5 * state.n_samples * L + config.g_o, 0.5 * float((E * E).sum()) + config.h_o


# ---------------------------------------------------------------------------
# draws


def _mvn_from_precision(rng, prec, rhs):
    """Draw from N(prec^-1 rhs, prec^-1) using a Cholesky factor of the precision."""
    try:
        c, low = cho_factor(prec, lower=True)
    except LinAlgError:
        try:
            c, low = cho_factor(prec + JITTER * np.eye(prec.shape[0]), lower=True)
        except LinAlgError as exc:
            raise NumericalError("posterior precision of an atom is not positive definite") from exc
    mean = cho_solve((c, low), rhs)
    return mean + solve_triangular(c, rng.standard_normal(prec.shape[0]), lower=True, trans="T")


def sample_phi(k, state, Y, kernel: KernelMatrix, rng, E=None) -> np.ndarray:
    return _mvn_from_precision(rng, *_phi_system(k, state, Y, kernel, E))


def sample_eta(k, state, kernel, config, rng) -> float:
    return _gamma(rng, *eta_conditional(k, state, kernel, config))


def sample_z(i, k, state, Y, rng) -> float:
    return float(rng.random() < z_conditional(i, k, state, Y))


def sample_s(i, k, state, Y, config, rng) -> float:
    mean, prec = s_conditional(i, k, state, Y, config)
    return mean + rng.standard_normal() / np.sqrt(prec)


def sample_pi(k, state, config, rng) -> float:
    a, b = pi_conditional(k, state, config)
    # Q = 1 leaves b = 0 when every pixel uses the atom: Beta(a, 0) is a point mass at 1
    draw = 1.0 if b <= 0 else rng.beta(a, b)
    return float(np.clip(draw, PI_EPS, 1.0 - PI_EPS))


def sample_lambda_s(state, config, rng) -> float:
    return _gamma(rng, *lambda_s_conditional(state, config))


def sample_lambda_eps(state, Y, config, rng, E=None) -> float:
    return _gamma(rng, *lambda_eps_conditional(state, Y, config, E))


def sample_zs_column(k, state, Y, config, rng, E):
    """Update z_ik then s_ik for every pixel i of atom k; E is updated in place.

    Pixels are conditionally independent given the atoms and precisions, so
    this is the same kernel as visiting the (i, k) pairs one by one.
    """
    phi = state.Phi[:, k]
    alpha = state.Z[k] * state.S[k]
    Rk = E + np.outer(phi, alpha)
    proj = phi @ Rk
    pp = float(phi @ phi)
    s = state.S[k]
    log_xi = -0.5 * state.lambda_eps * (pp * s * s - 2.0 * s * proj)
    log_xi = np.clip(log_xi, -LOG_XI_CLAMP, LOG_XI_CLAMP)
    p = state.pi[k]
    xi = np.exp(log_xi)
    prob = p * xi / (1.0 - p + xi * p)
    z = (rng.random(state.n_samples) < prob).astype(np.float64)
    prior = _s_precision_prior(state, config)
    prec = prior + state.lambda_eps * z * pp
    mean = (state.lambda_eps * z * proj + prior * state.mu_s[k]) / prec
    s_new = mean + rng.standard_normal(state.n_samples) / np.sqrt(prec)
    state.Z[k] = z
    state.S[k] = s_new
    E[:] = Rk - np.outer(phi, z * s_new)


# ---------------------------------------------------------------------------
# the sampler


def _check(state: GibbsState, it: int):
    for name in ("Phi", "S", "pi", "eta"):
        arr = getattr(state, name)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            idx = np.unravel_index(bad[0], arr.shape)
            raise NumericalError(f"non-finite {name}{list(idx)} at Gibbs iteration {it}")
    for name in ("lambda_s", "lambda_eps"):
        if not np.isfinite(getattr(state, name)):
            raise NumericalError(f"non-finite {name} at Gibbs iteration {it}")


def gibbs_sweep(state: GibbsState, Y, kernel, config, rng) -> None:
    """One systematic scan: atoms, kernel precisions, (z, s) pairs, pi, lambda_s, lambda_eps."""
    E = reconstruction_error(state, Y)
    for k in range(state.n_atoms):
        new = sample_phi(k, state, Y, kernel, rng, E)
        alpha = state.Z[k] * state.S[k]
        E -= np.outer(new - state.Phi[:, k], alpha)
        state.Phi[:, k] = new
    for k in range(state.n_atoms):
        state.eta[k] = sample_eta(k, state, kernel, config, rng)
    for k in range(state.n_atoms):
        sample_zs_column(k, state, Y, config, rng, E)
    for k in range(state.n_atoms):
        state.pi[k] = sample_pi(k, state, config, rng)
    state.lambda_s = sample_lambda_s(state, config, rng)
    state.lambda_eps = sample_lambda_eps(state, Y, config, rng, E)


def run_gibbs(Y, priors: PriorFactorization, config: ModelConfig, kernel: KernelMatrix | None = None,
              wavelengths=None, rng=None, keep_trace: bool = False) -> PosteriorSummary:
    """Run the sampler and average the atoms over the post-burn-in iterations."""
    Y = np.asarray(Y, dtype=np.float64)
    L = Y.shape[0]
    if priors.D.shape[0] != L or priors.A.shape[1] != Y.shape[1]:
        raise ValueError("prior factorization does not match the training matrix")
    if kernel is None:
        kernel = KernelMatrix.build(L, config.length_scale, config.kernel_distance, wavelengths)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = GibbsState.initial(priors, config)
    phi_sum = np.zeros_like(state.Phi)
    pi_sum = np.zeros(state.n_atoms)
    n_kept = 0
    trace = {"lambda_eps": [], "lambda_s": [], "eta": [], "pi": [], "Phi": []} if keep_trace else {}
    for it in range(config.gibbs_iters):
        gibbs_sweep(state, Y, kernel, config, rng)
        _check(state, it)
        if it >= config.burn_in:
            phi_sum += state.Phi
            pi_sum += state.pi
            n_kept += 1
        if keep_trace:
            trace["lambda_eps"].append(state.lambda_eps)
            trace["lambda_s"].append(state.lambda_s)
            trace["eta"].append(state.eta.copy())
            trace["pi"].append(state.pi.copy())
            trace["Phi"].append(state.Phi.copy())
    return PosteriorSummary(phi_sum / n_kept, pi_sum / n_kept, state.lambda_eps, n_kept,
                            {k: np.array(v) for k, v in trace.items()})
