"""Gaussian mixture fitting from scratch: kmeans++ seeding, log-space EM with
covariance regularization, exact silhouette scoring and silhouette-based
model selection.

Conventions
-----------
* All covariance estimates are the weighted (biased, ``ddof=0``) form, i.e.
  the EM M-step closed form. Seeding adds ``reg * I`` on the diagonal; the
  M-step instead floors eigenvalues at ``reg`` (the constrained maximizer),
  which keeps the likelihood ascent exact.
* The log-likelihood trace records the mean log-likelihood of the data under
  the parameters *entering* each EM iteration, so the trace is the textbook
  non-decreasing sequence.
* Convergence tests the max-norm of the concatenated parameter change
  (weights, means, covariances) after each M-step.
* A component whose total responsibility falls below 1e-12 is re-seeded at
  the lowest-likelihood sample with covariance ``reg * I`` and weight ``1/n``
  (weights renormalized), never an error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .util import derive_seed

_EMPTY_RESPONSIBILITY = 1e-12


class GmmError(ValueError):
    pass


class InsufficientSamplesError(GmmError):
    pass


class DegenerateClusteringError(GmmError):
    """Clustering has fewer than two non-empty clusters; silhouette undefined."""


@dataclass(frozen=True)
class GmmParams:
    """Mixture parameters: ``weights (k,)``, ``means (k, d)``,
    ``covariances (k, d, d)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(
            self, "covariances", np.asarray(self.covariances, dtype=np.float64)
        )

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self, regularization: float = None) -> None:
        """Raise GmmError unless weights form a distribution, shapes agree,
        covariances are symmetric, and (when ``regularization`` is given)
        every covariance eigenvalue clears the floor."""
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.covariances.shape != (k, d, d):
            raise GmmError("inconsistent parameter shapes")
        if np.any(self.weights < 0):
            raise GmmError("negative component weight")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise GmmError("weights do not sum to 1")
        for j in range(k):
            if not np.allclose(self.covariances[j], self.covariances[j].T, atol=1e-9):
                raise GmmError(f"covariance {j} not symmetric")
            if regularization is not None:
                eigvals = np.linalg.eigvalsh(self.covariances[j])
                if eigvals.min() < regularization - 1e-9:
                    raise GmmError(
                        f"covariance {j} eigenvalue {eigvals.min():.3e} below "
                        f"regularization floor {regularization:.3e}"
                    )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "components": [
                {
                    "weight": float(self.weights[j]),
                    "mean": self.means[j].tolist(),
                    "covariance": self.covariances[j].tolist(),
                }
                for j in range(self.n_components)
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GmmParams":
        comps = d["components"]
        if not comps:
            raise GmmError("mixture serialization holds no components")
        params = GmmParams(
            weights=np.array([c["weight"] for c in comps], dtype=np.float64),
            means=np.array([c["mean"] for c in comps], dtype=np.float64),
            covariances=np.array([c["covariance"] for c in comps], dtype=np.float64),
        )
        if "dim" in d and d["dim"] != params.dim:
            raise GmmError(f"declared dim {d['dim']} != component dim {params.dim}")
        params.validate()
        return params


@dataclass(frozen=True)
class FitConfig:
    n_components: int = 1
    max_iterations: int = 100
    convergence_epsilon: float = 1e-3
    covariance_regularization: float = 1e-2
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise GmmError("n_components must be >= 1")
        if self.max_iterations < 1:
            raise GmmError("max_iterations must be >= 1")
        if self.convergence_epsilon <= 0 or self.covariance_regularization <= 0:
            raise GmmError("epsilon and regularization must be positive")


@dataclass(frozen=True)
class FitReport:
    params: GmmParams
    log_likelihood_trace: tuple
    iterations_run: int
    converged: bool
    silhouette: float = None  # filled by select_model when it scored this fit


def _check_data(data: np.ndarray, k: int = 1) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise GmmError("data must be a non-empty (n, d) array")
    if np.isnan(data).any():
        raise GmmError("data contains NaN")
    if data.shape[0] < k:
        raise InsufficientSamplesError(
            f"{data.shape[0]} samples cannot support {k} components"
        )
    return data


def _prec_chol(covariances: np.ndarray):
    """Lower-triangular precision Cholesky factors and their log-dets."""
    k, d, _ = covariances.shape
    prec = np.empty_like(covariances)
    log_det = np.empty(k, dtype=np.float64)
    eye = np.eye(d)
    for j in range(k):
        try:
            chol = np.linalg.cholesky(covariances[j])
        except np.linalg.LinAlgError as err:
            raise GmmError(f"covariance {j} not positive definite") from err
        prec[j] = np.linalg.solve(chol, eye)
        log_det[j] = np.sum(np.log(np.diag(prec[j])))
    return prec, log_det


def _log_weighted_densities(params: GmmParams, data: np.ndarray) -> np.ndarray:
    prec, log_det = _prec_chol(params.covariances)
    comp = kernels.component_log_densities(data, params.means, prec, log_det)
    with np.errstate(divide="ignore"):
        return comp + np.log(params.weights)[None, :]


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def mixture_log_densities(params: GmmParams, data: np.ndarray) -> np.ndarray:
    """Per-sample mixture log densities log p(x_i | params), shape (n,)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise GmmError("expected a (n, d) sample matrix")
    if data.shape[1] != params.dim:
        raise GmmError(
            f"dimension mismatch: data has {data.shape[1]}, model has {params.dim}"
        )
    return _logsumexp_rows(_log_weighted_densities(params, data))


def log_density(params: GmmParams, x) -> float:
    """Mixture log density at a single point (1-D input)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise GmmError("log_density expects a single 1-D point")
    return float(mixture_log_densities(params, x[None, :])[0])


def responsibilities(params: GmmParams, data: np.ndarray) -> np.ndarray:
    """Posterior component memberships, rows summing to 1."""
    weighted = _log_weighted_densities(params, np.asarray(data, dtype=np.float64))
    lse = _logsumexp_rows(weighted)
    return np.exp(weighted - lse[:, None])


def kmeans_pp_init(
    data, k: int, rng_seed: int, covariance_regularization: float = 1e-2
) -> GmmParams:
    """D^2-weighted kmeans++ seeding followed by one hard-assignment
    refinement. Weights are cluster-size fractions; covariances are
    per-cluster (biased) sample covariances plus ``reg * I``.

    A cluster left empty by the refinement (only possible with duplicate
    data) keeps its seeded center, covariance ``reg * I`` and weight 0.
    """
    data = _check_data(data, k)
    n, d = data.shape
    rng = np.random.default_rng(rng_seed)

    centers = np.empty((k, d), dtype=np.float64)
    centers[0] = data[int(rng.integers(n))]
    closest = np.einsum("ij,ij->i", data - centers[0], data - centers[0])
    for j in range(1, k):
        total = float(closest.sum())
        if total > 0.0:
            cum = np.cumsum(closest / total)
            idx = int(np.searchsorted(cum, rng.random(), side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[j] = data[idx]
        diff = data - centers[j]
        closest = np.minimum(closest, np.einsum("ij,ij->i", diff, diff))

    dist2 = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        diff = data - centers[j]
        dist2[:, j] = np.einsum("ij,ij->i", diff, diff)
    labels = dist2.argmin(axis=1)

    reg = covariance_regularization * np.eye(d)
    weights = np.zeros(k, dtype=np.float64)
    means = np.empty((k, d), dtype=np.float64)
    covs = np.empty((k, d, d), dtype=np.float64)
    for j in range(k):
        member = data[labels == j]
        if member.shape[0] == 0:
            means[j] = centers[j]
            covs[j] = reg.copy()
            continue
        weights[j] = member.shape[0] / n
        means[j] = member.mean(axis=0)
        centered = member - means[j]
        covs[j] = centered.T @ centered / member.shape[0] + reg
    total = weights.sum()
    if total <= 0:
        raise GmmError("kmeans++ produced no populated cluster")
    weights /= total
    return GmmParams(weights=weights, means=means, covariances=covs)


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Project a symmetric matrix onto {eigenvalues >= floor}. This is the
    exact M-step maximizer under the constraint, so the EM ascent guarantee
    survives the regularization (plain diagonal addition does not: it drifts
    the likelihood by O(floor) per iteration near convergence). Matrices
    already above the floor pass through untouched."""
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] >= floor:
        return cov
    clipped = (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T
    return 0.5 * (clipped + clipped.T)


def em_fit(data, init: GmmParams, config: FitConfig) -> FitReport:
    """Expectation-maximization from ``init``. Deterministic: identical
    (data, init, config) give a bit-identical report."""
    data = _check_data(data, init.n_components)
    n, d = data.shape
    if init.dim != d:
        raise GmmError(f"init dimension {init.dim} != data dimension {d}")
    k = init.n_components
    reg = config.covariance_regularization * np.eye(d)

    weights = init.weights.copy()
    means = init.means.copy()
    covs = init.covariances.copy()
    trace = []
    converged = False
    iterations_run = 0

    for _ in range(config.max_iterations):
        iterations_run += 1
        params = GmmParams(weights, means, covs)
        weighted = _log_weighted_densities(params, data)
        lse = _logsumexp_rows(weighted)
        trace.append(float(lse.mean()))
        resp = np.exp(weighted - lse[:, None])

        nk = resp.sum(axis=0)
        new_weights = np.empty_like(weights)
        new_means = np.empty_like(means)
        new_covs = np.empty_like(covs)
        worst = int(np.argmin(lse))
        for j in range(k):
            if nk[j] < _EMPTY_RESPONSIBILITY:
                new_weights[j] = 1.0 / n
                new_means[j] = data[worst]
                new_covs[j] = reg.copy()
                continue
            new_weights[j] = nk[j] / n
            new_means[j] = resp[:, j] @ data / nk[j]
            centered = data - new_means[j]
            scatter = (resp[:, j, None] * centered).T @ centered / nk[j]
            new_covs[j] = _floor_covariance(scatter, config.covariance_regularization)
        new_weights /= new_weights.sum()

        delta = max(
            float(np.abs(new_weights - weights).max()),
            float(np.abs(new_means - means).max()),
            float(np.abs(new_covs - covs).max()),
        )
        weights, means, covs = new_weights, new_means, new_covs
        if delta < config.convergence_epsilon:
            converged = True
            break

    return FitReport(
        params=GmmParams(weights, means, covs),
        log_likelihood_trace=tuple(trace),
        iterations_run=iterations_run,
        converged=converged,
    )


def silhouette_score(
    data, labels, subsample_cap: int = 1000, rng_seed: int = 0
) -> float:
    """Mean silhouette over samples with exact O(n^2) distances. Datasets
    larger than ``subsample_cap`` are scored on a seeded uniform subsample.
    Samples in singleton clusters contribute 0."""
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if data.ndim != 2 or data.shape[0] != labels.shape[0]:
        raise GmmError("data and labels must align")
    if data.shape[0] < 2:
        raise InsufficientSamplesError("silhouette needs at least 2 samples")
    if data.shape[0] > subsample_cap:
        rng = np.random.default_rng(rng_seed)
        idx = np.sort(rng.choice(data.shape[0], size=subsample_cap, replace=False))
        data, labels = data[idx], labels[idx]
    if np.unique(labels).size < 2:
        raise DegenerateClusteringError("fewer than two non-empty clusters")
    n_clusters = int(labels.max()) + 1
    values = kernels.silhouette_samples(
        np.ascontiguousarray(data), np.ascontiguousarray(labels), n_clusters
    )
    return float(values.mean())


def select_model(data, k_min: int, k_max: int, config: FitConfig) -> FitReport:
    """Fit every k in [k_min, min(k_max, n)] and keep the fit whose hardened
    (argmax-responsibility) clustering scores the best silhouette. Degenerate
    clusterings are skipped; ties and a fully-degenerate sweep fall back to
    the smallest k."""
    if k_min < 1 or k_min > k_max:
        raise GmmError(f"bad component range [{k_min}, {k_max}]")
    data = _check_data(data, k_min)
    n = data.shape[0]
    k_hi = min(k_max, n)

    fallback = None
    best = None
    best_score = -np.inf
    for k in range(k_min, k_hi + 1):
        seed_k = derive_seed(config.rng_seed, k)
        init = kmeans_pp_init(data, k, seed_k, config.covariance_regularization)
        report = em_fit(data, init, replace(config, n_components=k))
        if fallback is None:
            fallback = report
        labels = responsibilities(report.params, data).argmax(axis=1)
        try:
            score = silhouette_score(
                data, labels, rng_seed=derive_seed(config.rng_seed, k, 1)
            )
        except DegenerateClusteringError:
            continue
        if score > best_score:
            best_score = score
            best = replace(report, silhouette=score)
    return best if best is not None else fallback
