"""Reduced-rank GP on a hypercube via Laplace eigenfunctions.

The kernel is approximated by a finite expansion in sinusoidal eigenfunctions
of the Laplace operator with Dirichlet boundary conditions; the GP prior
enters through the kernel's spectral density evaluated at the eigenfrequencies.
Coefficients are fitted by regularized least squares.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import optimize

class OutOfDomainError(ValueError):
    """Evaluation point lies outside the hypercube domain."""

@dataclass(frozen=True)
class Domain:
    """Axis-aligned hypercube [lower_i, upper_i] in feature space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("domain requires lower[i] < upper[i] for all i")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        """Half side lengths L_i; the symmetric form [-L, L] after centering."""
        return 0.5 * (self.upper - self.lower)

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Componentwise-inclusive membership test; x is (..., dim)."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

@dataclass(frozen=True)
class Hyperparameters:
    """SE-kernel hyperparameters plus observation noise variance."""

    signal_variance: float
    lengthscale: float
    noise_variance: float

    def __post_init__(self):
        for name in ("signal_variance", "lengthscale", "noise_variance"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

@dataclass(frozen=True)
class BasisSpec:
    """Domain, basis size and the integer index tuple of each eigenfunction.

    Index tuples are ordered by decreasing spectral density of the prior at
    the corresponding eigenfrequency, ties broken lexicographically, so the
    first basis functions carry the most prior energy.
    """

    domain: Domain
    count: int
    indices: np.ndarray  # (count, dim), integers >= 1
    hyper: Hyperparameters

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=int)
        if indices.ndim != 2 or indices.shape != (self.count, self.domain.dim):
            raise ValueError("indices must have shape (count, domain.dim)")
        if np.any(indices < 1):
            raise ValueError("basis indices must be >= 1")
        if len({tuple(row) for row in indices}) != self.count:
            raise ValueError("basis index tuples must be pairwise distinct")
        object.__setattr__(self, "indices", indices)

@dataclass(frozen=True)
class HilbertGpModel:
    """A basis spec together with fitted coefficients for one realization."""

    spec: BasisSpec
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.shape != (self.spec.count,):
            raise ValueError("coefficient vector length must equal spec.count")
        object.__setattr__(self, "w", w)

def se_kernel(hyper: Hyperparameters, x, x_prime) -> float:
    """Squared exponential kernel sigma^2 exp(-||x-x'||^2 / (2 l^2))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    sq = np.sum((x - x_prime) ** 2)
    return hyper.signal_variance * np.exp(-sq / (2.0 * hyper.lengthscale**2))

def se_spectral_density(hyper: Hyperparameters, omega) -> np.ndarray | float:
    """Spectral density of the SE kernel, sigma^2 sqrt(2 pi l^2) e^{-l^2 w^2/2}."""
    omega = np.asarray(omega, dtype=float)
    l2 = hyper.lengthscale**2
    out = hyper.signal_variance * np.sqrt(2.0 * np.pi * l2) * np.exp(-0.5 * l2 * omega**2)
    return out if out.ndim else float(out)

def eigenvalues(spec: BasisSpec) -> np.ndarray:
    """All N Laplace eigenvalues sum_i (pi j_i / (2 L_i))^2."""
    L = spec.domain.half_widths
    return np.sum((np.pi * spec.indices / (2.0 * L)) ** 2, axis=1)

def eigenvalue(spec: BasisSpec, n: int) -> float:
    """Eigenvalue of basis function n (1-indexed)."""
    if not 1 <= n <= spec.count:
        raise IndexError(f"basis index {n} out of range 1..{spec.count}")
    return float(eigenvalues(spec)[n - 1])

def spectral_weights(spec: BasisSpec) -> np.ndarray:
    """Prior variances S_se(sqrt(lambda_n)) of the coefficients."""
    return np.asarray(se_spectral_density(spec.hyper, np.sqrt(eigenvalues(spec))))

def basis_matrix(spec: BasisSpec, x: np.ndarray, validate: bool = True) -> np.ndarray:
    """Evaluate all basis functions at points x, shape (K, dim) -> (K, N).

    With validate=False, out-of-domain points are evaluated formally (used by
    callers that track domain violations themselves).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.domain.dim:
        raise ValueError(f"points must have {spec.domain.dim} columns")
    if validate and not np.all(spec.domain.contains(x)):
        raise OutOfDomainError("evaluation point outside the hypercube domain")
    L = spec.domain.half_widths
    centered = x - spec.domain.center  # measured from the domain center
    # args[k, n, i] = pi j_{n,i} (x_{k,i} + L_i) / (2 L_i)
    args = np.pi * spec.indices[None, :, :] * (centered[:, None, :] + L) / (2.0 * L)
    phi = np.prod(np.sin(args) / np.sqrt(L), axis=2)
    return phi[0] if squeeze else phi

def eigenfunction(spec: BasisSpec, n: int, x) -> float:
    """Evaluate basis function n (1-indexed) at a single point."""
    if not 1 <= n <= spec.count:
        raise IndexError(f"basis index {n} out of range 1..{spec.count}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(basis_matrix(spec, x)[n - 1])

def kernel_approximation(spec: BasisSpec, x, x_prime) -> float:
    """Truncated kernel sum_n S(sqrt(lambda_n)) phi_n(x) phi_n(x')."""
    if spec.count == 0:
        return 0.0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    s = spectral_weights(spec)
    return float(np.sum(s * basis_matrix(spec, x) * basis_matrix(spec, x_prime)))

def make_basis_spec(domain: Domain, count: int, hyper: Hyperparameters) -> BasisSpec:
    """Select the `count` highest-prior-energy index tuples on `domain`.

    Candidates are enumerated on an integer box large enough to contain the
    top `count` tuples and ranked by spectral density descending with
    lexicographic tie-breaking, which makes the selection deterministic.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    dim = domain.dim
    per_dim = count if dim == 1 else int(np.ceil(count ** (1.0 / dim))) + 2
    L = domain.half_widths
    while True:
        cands = np.array(list(itertools.product(range(1, per_dim + 1), repeat=dim)), dtype=int)
        lam = np.sum((np.pi * cands / (2.0 * L)) ** 2, axis=1)
        s = np.asarray(se_spectral_density(hyper, np.sqrt(lam)))
        order = sorted(range(len(cands)), key=lambda i: (-s[i], tuple(cands[i])))
        top = cands[order[:count]]
        # The box is large enough once no selected tuple touches its far face
        # (otherwise a better tuple might lie just outside).
        if dim == 1 or np.all(top < per_dim) or per_dim >= count:
            return BasisSpec(domain=domain, count=count, indices=top, hyper=hyper)
        per_dim += 2

def padded_domain(inputs: np.ndarray, padding: float = 0.25) -> Domain:
    """Hypercube covering the data range widened by `padding` per side.

    The Dirichlet boundary forces the expansion to zero at the domain edges,
    so the data range must sit strictly inside.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    lo = inputs.min(axis=0)
    hi = inputs.max(axis=0)
    pad = padding * (hi - lo)
    return Domain(lower=lo - pad, upper=hi + pad)

def fit_coefficients(spec: BasisSpec, inputs: np.ndarray, targets: np.ndarray) -> HilbertGpModel:
    """Regularized least-squares coefficients for one target realization.

    Solves (Phi^T Phi + sigma_xi^2 V^{-1}) w = Phi^T xi with V the diagonal
    of prior spectral weights, via Cholesky (the regularizer makes the system
    positive definite).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    if inputs.shape[0] != targets.size or targets.size < 1:
        raise ValueError("inputs and targets must have matching nonzero length")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    phi = basis_matrix(spec, inputs)
    v = spectral_weights(spec)
    a = phi.T @ phi + np.diag(spec.hyper.noise_variance / v)
    b = phi.T @ targets
    c, low = sla.cho_factor(a, lower=True)
    w = sla.cho_solve((c, low), b)
    return HilbertGpModel(spec=spec, w=w)

def evaluate_expansion(model: HilbertGpModel, x) -> np.ndarray | float:
    """w^T phi(x); x may be a single point or a batch of points."""
    phi = basis_matrix(model.spec, x)
    out = phi @ model.w
    return float(out) if np.ndim(out) == 0 else out

def log_marginal_likelihood(spec: BasisSpec, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Reduced-rank GP log marginal likelihood of one dataset.

    Uses the matrix inversion lemma so only an N x N system is factorized:
    with B = sigma_xi^2 V^{-1} + Phi^T Phi,
    log|C| = (K - N) log sigma_xi^2 + log|V| + log|B| and
    y^T C^{-1} y = (y^T y - y^T Phi B^{-1} Phi^T y) / sigma_xi^2.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    K, N = inputs.shape[0], spec.count
    s2 = spec.hyper.noise_variance
    phi = basis_matrix(spec, inputs)
    v = spectral_weights(spec)
    b = phi.T @ phi + np.diag(s2 / v)
    c, low = sla.cho_factor(b, lower=True)
    bty = phi.T @ targets
    quad = (targets @ targets - bty @ sla.cho_solve((c, low), bty)) / s2
    logdet_b = 2.0 * np.sum(np.log(np.diag(c)))
    logdet = (K - N) * np.log(s2) + np.sum(np.log(v)) + logdet_b
    return -0.5 * (quad + logdet + K * np.log(2.0 * np.pi))

_NOISE_FLOOR = 1e-10
# Fixed simplex starting points in (log sigma^2, log l, log sigma_xi^2),
# relative to a data-derived scale guess.
_RESTART_OFFSETS = (
    (0.0, 0.0, 0.0),
    (1.5, -1.0, -2.0),
    (-1.5, 1.0, 2.0),
)

def optimize_hyperparameters(spec_template: BasisSpec, datasets) -> Hyperparameters:
    """Maximize the summed log marginal likelihood over all realizations.

    Derivative-free simplex search on log-parameters, restarted from three
    fixed offsets around a data-derived initial guess; deterministic. The
    noise variance is floored at 1e-10 so noiseless data cannot drive the
    objective singular.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("at least one dataset is required")

    y_all = np.concatenate([np.asarray(y, dtype=float).ravel() for _, y in datasets])
    x_all = np.vstack([np.atleast_2d(np.asarray(x, dtype=float)) for x, _ in datasets])
    var0 = max(float(np.var(y_all)), 1e-6)
    len0 = max(float(np.mean(x_all.max(axis=0) - x_all.min(axis=0))) / 5.0, 1e-3)
    theta0 = np.log([var0, len0, max(1e-2 * var0, _NOISE_FLOOR)])

    def unpack(theta):
        return Hyperparameters(
            signal_variance=float(np.exp(theta[0])),
            lengthscale=float(np.exp(theta[1])),
            noise_variance=float(max(np.exp(theta[2]), _NOISE_FLOOR)),
        )

    def objective(theta):
        try:
            hyper = unpack(theta)
            spec = BasisSpec(
                domain=spec_template.domain,
                count=spec_template.count,
                indices=spec_template.indices,
                hyper=hyper,
            )
            total = sum(log_marginal_likelihood(spec, x, y) for x, y in datasets)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            return np.inf
        return -total if np.isfinite(total) else np.inf

    best = None
    for offset in _RESTART_OFFSETS:
        res = optimize.minimize(
            objective,
            theta0 + np.asarray(offset),
            method="Nelder-Mead",
            options={"maxiter": 200, "xatol": 1e-6, "fatol": 1e-8},
        )
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise RuntimeError("hyperparameter search failed: objective non-finite everywhere")
    return unpack(best.x)

def _fmt(x: float) -> float:
    # round-trip safe: 17 significant digits preserve IEEE doubles exactly
    return float(format(float(x), ".17g"))

def model_to_dict(model: HilbertGpModel) -> dict:
    spec = model.spec
    return {
        "domain": {
            "lower": [_fmt(v) for v in spec.domain.lower],
            "upper": [_fmt(v) for v in spec.domain.upper],
        },
        "hyper": {
            "sigma2": _fmt(spec.hyper.signal_variance),
            "l": _fmt(spec.hyper.lengthscale),
            "sigma_xi2": _fmt(spec.hyper.noise_variance),
        },
        "indices": spec.indices.tolist(),
        "w": [_fmt(v) for v in model.w],
    }

def model_from_dict(doc: dict) -> HilbertGpModel:
    domain = Domain(lower=np.asarray(doc["domain"]["lower"]), upper=np.asarray(doc["domain"]["upper"]))
    hyper = Hyperparameters(
        signal_variance=doc["hyper"]["sigma2"],
        lengthscale=doc["hyper"]["l"],
        noise_variance=doc["hyper"]["sigma_xi2"],
    )
    indices = np.asarray(doc["indices"], dtype=int)
    spec = BasisSpec(domain=domain, count=indices.shape[0], indices=indices, hyper=hyper)
    return HilbertGpModel(spec=spec, w=np.asarray(doc["w"], dtype=float))

def save_model(model: HilbertGpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)

def load_model(path) -> HilbertGpModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
