"""Location-scale factor-model simulators and their estimands.

The simulated outcome is

    Y_it = gamma_it X_it + l_y(lambda_i, f_t) + s_y(lambda_i, f_t) eps_it
    X_it = l_x(lambda_xi, f_xt) + s_x(lambda_xi, f_xt) eps_x,it

with Gamma(1,1) unit factors, an AR(1) period factor with Gamma innovations
(stationary mean and variance 1), additive scale fields s = unit + period
factor, and a mixing weight pi that interpolates between regressor-specific
factors (pi = 0: outcome and regressor share factors exactly) and
independent ones (pi = 1). The slope field gamma_it is chosen so the
conditional slope beta_it = beta0 + (kappa + rho) s_y / s_x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionMismatch, InvalidAlpha, MissingLatents
from .panel import PanelDataset, PanelMatrix


@dataclass(frozen=True)
class DgpSpec:
    """Full parameterization of one simulated design."""

    n: int
    T: int
    kappa: float
    rho: float
    pi: float
    alpha: float = 0.5
    beta0: float = 0.0
    location_family: Literal["lfm", "nlfm"] = "lfm"
    burn_in: int = 500
    label: str = "custom"

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise DimensionMismatch(f"need n, T >= 1, got ({self.n}, {self.T})")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidAlpha(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.location_family not in ("lfm", "nlfm"):
            raise ValueError(f"unknown location_family {self.location_family!r}")


#: (kappa, rho, location_family) per numbered design
_PRESETS = {
    1: (0.0, 0.5, "lfm"),
    2: (0.0, 0.5, "nlfm"),
    3: (0.5, 0.0, "lfm"),
    4: (0.5, 0.0, "nlfm"),
}


def dgp_preset(dgp_id: int, n: int, T: int, pi: float) -> DgpSpec:
    """The four numbered designs: noise-driven (1, 2) or slope-driven (3, 4)
    conditional dependence, with a linear (1, 3) or nonlinear (2, 4)
    location surface."""
    if dgp_id not in _PRESETS:
        raise ValueError(f"dgp_id must be one of {sorted(_PRESETS)}, got {dgp_id}")
    kappa, rho, family = _PRESETS[dgp_id]
    return DgpSpec(
        n=n, T=T, kappa=kappa, rho=rho, pi=pi,
        location_family=family, label=str(dgp_id),
    )


@dataclass(frozen=True)
class LatentDraws:
    """Raw latent draws behind one simulated panel."""

    lambda_plus: np.ndarray
    lambda_x: np.ndarray
    f_plus: np.ndarray
    f_x: np.ndarray
    eps_x: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class OracleFields:
    """Conditional moments known to the simulator.

    ``weights_nT`` are the conditional-variance weights, normalized to sum
    to one over the panel; ``beta_it`` is the conditional slope field.
    """

    beta_it: np.ndarray
    var_x_cond: np.ndarray
    cov_yx_cond: np.ndarray
    weights_nT: np.ndarray
    gamma_it: np.ndarray


def ar1_gamma(T: int, alpha: float, burn_in: int, stream: np.random.Generator) -> np.ndarray:
    """Stationary-mean-one AR(1) with Gamma innovations.

    f_t = alpha f_{t-1} + eta_t with eta ~ Gamma(shape, scale) chosen so the
    stationary law has mean 1 and variance 1. The recursion starts at the
    stationary mean, runs ``burn_in`` discarded steps, and returns the next
    T values. alpha = 0 gives i.i.d. Gamma(1, 1) draws.
    """
    if not 0.0 <= alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in [0, 1), got {alpha}")
    if T < 1:
        raise DimensionMismatch(f"need T >= 1, got {T}")
    shape = (1.0 - alpha) ** 2 / (1.0 - alpha**2)
    scale = (1.0 - alpha**2) / (1.0 - alpha)
    innov = stream.gamma(shape, scale, size=burn_in + T)
    series = lfilter([1.0], [1.0, -alpha], innov, zi=[alpha * 1.0])[0]
    return np.asarray(series[burn_in:], dtype=np.float64).copy()


def _location(unit: np.ndarray, period: np.ndarray, family: str) -> np.ndarray:
    if family == "lfm":
        return np.outer(unit, period)
    # power-mean surface: smooth, approximately low rank but full rank exactly
    a = unit[:, None] ** 10
    b = period[None, :] ** 10
    return (0.5 * a + 0.5 * b) ** 0.1


def simulate(spec: DgpSpec, stream: np.random.Generator) -> PanelDataset:
    """Draw one panel and attach its latent draws and oracle fields.

    The draw order is fixed (unit factors, period factors, regressor noise,
    outcome noise) so a given stream always yields the same panel.
    """
    n, T, pi = spec.n, spec.T, spec.pi
    lambda_plus = stream.gamma(1.0, 1.0, size=n)
    lambda_x = stream.gamma(1.0, 1.0, size=n)
    f_plus = ar1_gamma(T, spec.alpha, spec.burn_in, stream)
    f_x = ar1_gamma(T, spec.alpha, spec.burn_in, stream)
    eps_x = stream.standard_normal((n, T))
    u = stream.standard_normal((n, T))

    lam = pi * lambda_plus + (1.0 - pi) * lambda_x
    f = pi * f_plus + (1.0 - pi) * f_x
    s_y = lam[:, None] + f[None, :]
    s_x = lambda_x[:, None] + f_x[None, :]
    l_y = _location(lam, f, spec.location_family)
    l_x = _location(lambda_x, f_x, spec.location_family)
    eps = spec.rho * eps_x + math.sqrt(1.0 - spec.rho**2) * u

    gamma_it = spec.beta0 + spec.kappa * s_y * s_x / s_x**2
    x = l_x + s_x * eps_x
    y = gamma_it * x + l_y + s_y * eps

    var_x_cond = s_x**2
    cov_yx_cond = gamma_it * var_x_cond + spec.rho * s_y * s_x
    beta_it = spec.beta0 + (spec.kappa + spec.rho) * s_y * s_x / s_x**2
    oracle = OracleFields(
        beta_it=beta_it,
        var_x_cond=var_x_cond,
        cov_yx_cond=cov_yx_cond,
        weights_nT=var_x_cond / var_x_cond.sum(),
        gamma_it=gamma_it,
    )
    latents = LatentDraws(
        lambda_plus=lambda_plus, lambda_x=lambda_x,
        f_plus=f_plus, f_x=f_x, eps_x=eps_x, u=u,
    )
    return PanelDataset(
        y=PanelMatrix(y),
        x=(PanelMatrix(x),),
        latents=latents,
        oracle=oracle,
        meta={"spec": spec},
    )


def beta_star_analytic(spec: DgpSpec) -> float:
    """Closed-form variance-weighted estimand: beta0 + (kappa + rho)(6 - 4 pi)/6."""
    return spec.beta0 + (spec.kappa + spec.rho) * (6.0 - 4.0 * spec.pi) / 6.0


def beta_star_nT(dataset: PanelDataset) -> float:
    """Finite-panel estimand conditional on the realized latents.

    The ratio of summed conditional covariances to summed conditional
    variances, which equals the variance-weighted average of beta_it.
    """
    oracle = dataset.oracle
    if oracle is None:
        raise MissingLatents("dataset carries no oracle fields")
    return float(oracle.cov_yx_cond.sum() / oracle.var_x_cond.sum())


@dataclass(frozen=True)
class CounterexampleDraws:
    """Latents of the no-signal design with a shared factor loading."""

    eta: np.ndarray
    kappa_i: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    eps: np.ndarray
    nu: np.ndarray


def counterexample_simulate(n: int, T: int, stream: np.random.Generator) -> PanelDataset:
    """Panel where every conditional slope is zero yet additive-effects
    estimators converge to one half.

    Y_it = eta_i + lambda_i z_t + eps_it and X_it = kappa_i + lambda_i z_t
    + nu_it with all components independent standard normal. Conditional on
    the latents, Cov(Y, X) = 0 and Var(X) = 1 everywhere, so any weighted
    slope average is zero; the additive-effects probability limit 1/2 is
    recorded in the metadata.
    """
    if n < 1 or T < 1:
        raise DimensionMismatch(f"need n, T >= 1, got ({n}, {T})")
    eta = stream.standard_normal(n)
    kappa_i = stream.standard_normal(n)
    lam = stream.standard_normal(n)
    z = stream.standard_normal(T)
    eps = stream.standard_normal((n, T))
    nu = stream.standard_normal((n, T))
    common = lam[:, None] * z[None, :]
    y = eta[:, None] + common + eps
    x = kappa_i[:, None] + common + nu
    oracle = OracleFields(
        beta_it=np.zeros((n, T)),
        var_x_cond=np.ones((n, T)),
        cov_yx_cond=np.zeros((n, T)),
        weights_nT=np.full((n, T), 1.0 / (n * T)),
        gamma_it=np.zeros((n, T)),
    )
    latents = CounterexampleDraws(eta=eta, kappa_i=kappa_i, lam=lam, z=z, eps=eps, nu=nu)
    return PanelDataset(
        y=PanelMatrix(y),
        x=(PanelMatrix(x),),
        latents=latents,
        oracle=oracle,
        meta={"plim_additive_effects": 0.5, "label": "counterexample"},
    )


def _format_float(v: float) -> str:
    return repr(float(v))


def write_latents_csv(dataset: PanelDataset, path) -> None:
    """Sidecar CSV of latent draws: columns kind, i, t, value."""
    latents = dataset.latents
    if latents is None:
        raise MissingLatents("dataset carries no latent draws")
    rows = ["kind,i,t,value"]

    def unit_block(kind: str, vec: np.ndarray):
        for i, v in enumerate(vec):
            rows.append(f"{kind},{i},,{_format_float(v)}")

    def period_block(kind: str, vec: np.ndarray):
        for t, v in enumerate(vec):
            rows.append(f"{kind},,{t},{_format_float(v)}")

    def matrix_block(kind: str, mat: np.ndarray):
        for i in range(mat.shape[0]):
            for t in range(mat.shape[1]):
                rows.append(f"{kind},{i},{t},{_format_float(mat[i, t])}")

    if isinstance(latents, LatentDraws):
        unit_block("lambda_plus", latents.lambda_plus)
        unit_block("lambda_x", latents.lambda_x)
        period_block("f_plus", latents.f_plus)
        period_block("f_x", latents.f_x)
        matrix_block("eps_x", latents.eps_x)
        matrix_block("u", latents.u)
    elif isinstance(latents, CounterexampleDraws):
        unit_block("eta", latents.eta)
        unit_block("kappa_i", latents.kappa_i)
        unit_block("lambda", latents.lam)
        period_block("z", latents.z)
        matrix_block("eps", latents.eps)
        matrix_block("nu", latents.nu)
    else:
        raise MissingLatents(f"cannot serialize latents of type {type(latents).__name__}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(rows) + "\n")
