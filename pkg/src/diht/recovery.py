"""Centralized sparse-recovery building blocks.

Problem generation, the hard-thresholding operator, a reference IHT solver
and the step-size / error helpers shared by the distributed code.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InvalidArgument, NumericError

DIVERGENCE_FACTOR = 1e6

_FORMAT_TAG = "DIHT-PROBLEM"
_FORMAT_VERSION = 1


def hard_threshold(v, K):
    """Keep the ``K`` largest-magnitude entries of ``v`` and zero the rest.

    Ties in magnitude go to the lower index, so every agent that applies the
    operator to the same vector selects the same support.
    """
    v = np.asarray(v, dtype=float)
    if K is None or int(K) <= 0:
        raise InvalidArgument(f"K must be a positive integer, got {K!r}")
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgument("hard_threshold needs a nonempty 1-D vector")
    K = int(K)
    if K >= v.size:
        return v.copy()
    keep = np.lexsort((np.arange(v.size), -np.abs(v)))[:K]
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def relative_error(x_hat, x_ref):
    """``||x_hat - x_ref|| / ||x_ref||``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    ref_norm = np.linalg.norm(x_ref)
    if ref_norm == 0:
        raise InvalidArgument("relative error is undefined for a zero reference")
    return float(np.linalg.norm(x_hat - x_ref) / ref_norm)


def recovery_error(x_hat, x_ref):
    # Stop-rule error: relative when possible, absolute against a zero reference.
    ref_norm = np.linalg.norm(x_ref)
    if ref_norm == 0:
        return float(np.linalg.norm(x_hat))
    return float(np.linalg.norm(np.asarray(x_hat) - x_ref) / ref_norm)


def divergence_guard(ref):
    ref_norm = float(np.linalg.norm(ref))
    return DIVERGENCE_FACTOR * (ref_norm if ref_norm > 0 else 1.0)


def power_iteration(G, tol=1e-6, max_iter=10_000, seed=0):
    """Largest eigenvalue of the symmetric PSD matrix ``G``.

    Iterates until the Rayleigh quotient changes by at most ``tol`` relative
    to its current value.

    Raises:
        NumericError: no convergence within ``max_iter`` steps.
    """
    G = np.asarray(G, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        lam_new = float(v @ w)
        w_norm = np.linalg.norm(w)
        if w_norm == 0:
            return 0.0
        v = w / w_norm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise NumericError(f"power iteration did not converge in {max_iter} steps")


def max_step_size(A):
    """Step-size bound ``1 / (2 lambda_max(A^T A))`` below which IHT converges."""
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        raise InvalidArgument("max_step_size needs a nonzero matrix")
    # A A^T and A^T A share their nonzero spectrum; iterate on the smaller one.
    G = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    return 1.0 / (2.0 * power_iteration(G))


@dataclass(frozen=True, eq=False)
class RecoveryProblem:
    """A sensing problem split row-wise across ``P`` agents.

    Agent ``p`` (1-based) owns ``agent_matrices[p-1]`` and
    ``agent_measurements[p-1]``; ``b^p = A^p x + e^p``.
    """

    agent_matrices: tuple
    agent_measurements: tuple
    planted_signal: np.ndarray
    sparsity: int
    step_size: float
    noise: tuple = None
    seed: int | None = None
    noise_std: float = 0.0
    _A: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mats = tuple(np.asarray(a, dtype=float) for a in self.agent_matrices)
        meas = tuple(np.asarray(b, dtype=float) for b in self.agent_measurements)
        x = np.asarray(self.planted_signal, dtype=float)
        if not mats or len(mats) != len(meas):
            raise InvalidArgument("need one measurement vector per agent matrix")
        N = x.size
        for p, (a, b) in enumerate(zip(mats, meas), start=1):
            if a.ndim != 2 or a.shape[1] != N or a.shape[0] == 0:
                raise InvalidArgument(f"agent {p}: matrix shape {a.shape} incompatible with N={N}")
            if b.shape != (a.shape[0],):
                raise InvalidArgument(f"agent {p}: measurement length {b.shape} != rows {a.shape[0]}")
        noise = self.noise
        if noise is None:
            noise = tuple(np.zeros(a.shape[0]) for a in mats)
        else:
            noise = tuple(np.asarray(e, dtype=float) for e in noise)
        if int(self.sparsity) < 1 or int(self.sparsity) > N:
            raise InvalidArgument(f"sparsity must lie in [1, N], got {self.sparsity}")
        if not self.step_size > 0:
            raise InvalidArgument(f"step size must be positive, got {self.step_size}")
        set_ = object.__setattr__
        set_(self, "agent_matrices", mats)
        set_(self, "agent_measurements", meas)
        set_(self, "planted_signal", x)
        set_(self, "noise", noise)
        set_(self, "sparsity", int(self.sparsity))
        set_(self, "step_size", float(self.step_size))
        set_(self, "_A", np.vstack(mats))
        set_(self, "_b", np.concatenate(meas))

    @property
    def A(self):
        return self._A

    @property
    def b(self):
        return self._b

    @property
    def N(self):
        return self.planted_signal.size

    @property
    def M(self):
        return self._A.shape[0]

    @property
    def P(self):
        return len(self.agent_matrices)

    @property
    def rows_per_agent(self):
        return [a.shape[0] for a in self.agent_matrices]

    def with_step_size(self, alpha):
        return dataclasses.replace(self, step_size=alpha)

    @classmethod
    def from_arrays(cls, A, x, P, K, alpha=None, noise=None, seed=None, noise_std=0.0,
                    uneven=False):
        """Split ``A`` into ``P`` row blocks and measure ``x`` through it.

        Blocks must be equal unless ``uneven`` is set, in which case the first
        ``M mod P`` agents get one extra row.
        """
        A = np.asarray(A, dtype=float)
        x = np.asarray(x, dtype=float)
        if P <= 0 or P > A.shape[0]:
            raise InvalidArgument(f"need 1 <= P <= M, got P={P}, M={A.shape[0]}")
        if A.shape[0] % P and not uneven:
            raise InvalidArgument(f"P={P} does not divide M={A.shape[0]}")
        mats = np.array_split(A, P)
        if noise is None:
            noise_parts = [np.zeros(a.shape[0]) for a in mats]
        else:
            noise_parts = np.array_split(np.asarray(noise, dtype=float), P)
        meas = [a @ x + e for a, e in zip(mats, noise_parts)]
        if alpha is None:
            alpha = 0.9 * max_step_size(A)
        return cls(tuple(mats), tuple(meas), x, K, alpha, tuple(noise_parts), seed, noise_std)


def generate_problem(N, M, P, K, seed, alpha=None, noise_std=0.0, uneven=False):
    """Random Gaussian sensing problem with a planted ``K``-sparse signal.

    ``A`` has i.i.d. N(0, 1/M) entries and the planted signal has a uniformly
    random support carrying standard-normal values. Rows are dealt out in
    ``P`` equal blocks (near-equal with ``uneven``). ``alpha=None`` picks
    ``0.9 * max_step_size(A)``.
    """
    if P <= 0 or M < P or (M % P and not uneven):
        raise InvalidArgument(f"P={P} must divide M={M} evenly")
    if not 1 <= K <= N:
        raise InvalidArgument(f"need 1 <= K <= N, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, 1.0 / np.sqrt(M), size=(M, N))
    x = np.zeros(N)
    support = np.sort(rng.choice(N, size=K, replace=False))
    x[support] = rng.standard_normal(K)
    noise = rng.normal(0.0, noise_std, size=M) if noise_std > 0 else None
    return RecoveryProblem.from_arrays(A, x, P, K, alpha=alpha, noise=noise,
                                       seed=seed, noise_std=noise_std, uneven=uneven)


@dataclass(frozen=True)
class Estimate:
    iterate: np.ndarray
    iteration: int


@dataclass
class IHTResult:
    estimate: Estimate
    errors: list
    iterates: list
    converged: bool


def centralized_iht(problem, tol=1e-2, max_iter=2000, keep_iterates=False):
    """Reference IHT: ``x <- H_K(x + alpha A^T (b - A x))`` from ``x = 0``.

    ``errors[t]`` is the error of iterate ``t`` against the planted signal
    (relative, or absolute when the planted signal is zero).
    """
    A, b = problem.A, problem.b
    alpha, K = problem.step_size, problem.sparsity
    ref = problem.planted_signal
    guard = divergence_guard(ref)

    x = np.zeros(problem.N)
    err = recovery_error(x, ref)
    errors = [err]
    iterates = [x] if keep_iterates else []
    t = 0
    while err > tol and t < max_iter:
        x = hard_threshold(x + alpha * (A.T @ (b - A @ x)), K)
        t += 1
        if not np.isfinite(x).all() or np.linalg.norm(x) > guard:
            raise DivergenceError(
                f"IHT diverged at iteration {t} with step size alpha={alpha:g}",
                alpha=alpha, iteration=t)
        err = recovery_error(x, ref)
        errors.append(err)
        if keep_iterates:
            iterates.append(x)
    return IHTResult(Estimate(x, t), errors, iterates, err <= tol)


def save_problem(problem, path):
    """Write ``problem`` as text.

    Layout: a ``key=value`` header line, the per-agent row counts, the ``M``
    rows of ``A`` (row-major, one row per line), then ``b``, the noise vector
    and the planted signal, one line each. Floats use 17 significant digits
    so a load reproduces every bit.
    """
    seed = "none" if problem.seed is None else str(problem.seed)
    header = (f"{_FORMAT_TAG} version={_FORMAT_VERSION} N={problem.N} M={problem.M} "
              f"P={problem.P} K={problem.sparsity} alpha={problem.step_size!r} "
              f"seed={seed} noise_std={problem.noise_std!r}")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(" ".join(str(m) for m in problem.rows_per_agent) + "\n")
        np.savetxt(fh, problem.A, fmt="%.17g")
        for vec in (problem.b, np.concatenate(problem.noise), problem.planted_signal):
            np.savetxt(fh, vec[None, :], fmt="%.17g")


def load_problem(path):
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(_FORMAT_TAG):
        raise InvalidArgument(f"{path}: not a problem file")
    meta = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    if int(meta["version"]) != _FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported version {meta['version']}")
    N, M, P = int(meta["N"]), int(meta["M"]), int(meta["P"])
    rows = [int(r) for r in lines[1].split()]
    if len(rows) != P or sum(rows) != M:
        raise InvalidArgument(f"{path}: row counts do not match header")
    A = np.array([[float(v) for v in ln.split()] for ln in lines[2:2 + M]]).reshape(M, N)
    b, noise, x = (np.array([float(v) for v in ln.split()]) for ln in lines[2 + M:5 + M])
    cuts = np.cumsum(rows)[:-1]
    seed = None if meta["seed"] == "none" else int(meta["seed"])
    return RecoveryProblem(tuple(np.split(A, cuts)), tuple(np.split(b, cuts)), x,
                           int(meta["K"]), float(meta["alpha"]), tuple(np.split(noise, cuts)),
                           seed, float(meta["noise_std"]))
