"""Exact pointwise Lie-algebra computations in sl_n(C).

Everything here is fiberwise: plain (n, n) complex matrices, no grids.
Conventions used throughout the package:

* F is the subdiagonal of ones, H = diag(n-1, n-3, ..., 1-n), and E is the
  superdiagonal with entries i*(n-i), so that [H, E] = 2E, [H, F] = -2F,
  [E, F] = H hold with integer arithmetic.
* J is the antidiagonal matrix of ones.  The linear involution is
  sigma(X) = -J X^T J, the antilinear one is rho(X) = -X^dagger, and
  tau = sigma o rho.  With the E-normalization above, sigma(F) = -F and
  sigma(E) = -E.
* Operators on sl_n are expressed against the fixed basis returned by
  ``sl_basis``: elementary matrices E_ab (a != b) in row-major order
  followed by the diagonal differences E_aa - E_{a+1,a+1}.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidDimensionError

__all__ = [
    "commutator",
    "principal_nilpotent",
    "Sl2Triple",
    "complete_sl2_triple",
    "weight_basis",
    "trace_pairing",
    "sl_basis",
    "AdOperator",
    "adjoint_operator",
    "centralizer_basis",
    "is_principal_nilpotent",
    "Involutions",
    "involutions",
    "sigma_plus_basis",
    "sigma_minus_basis",
    "random_traceless",
]


def commutator(x, y):
    """[x, y] = xy - yx, broadcasting over leading axes."""
    return x @ y - y @ x


def _check_n(n):
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidDimensionError(f"matrix size must be an integer >= 2, got {n!r}")


def principal_nilpotent(n: int) -> np.ndarray:
    """Subdiagonal of ones; the reference regular nilpotent of sl_n."""
    _check_n(n)
    f = np.zeros((n, n), dtype=complex)
    idx = np.arange(n - 1)
    f[idx + 1, idx] = 1.0
    return f


@dataclass(frozen=True)
class Sl2Triple:
    """Triple (F, H, E) with [H,E] = 2E, [H,F] = -2F, [E,F] = H."""

    n: int
    F: np.ndarray
    H: np.ndarray
    E: np.ndarray


def complete_sl2_triple(n: int) -> Sl2Triple:
    """Complete the reference nilpotent F into the standard triple.

    H = diag(n-1, n-3, ..., 1-n) and E has superdiagonal entries i*(n-i);
    the bracket relations then hold exactly in integer arithmetic.
    """
    _check_n(n)
    f = principal_nilpotent(n)
    h = np.diag(np.array([n - 1 - 2 * i for i in range(n)], dtype=complex))
    e = np.zeros((n, n), dtype=complex)
    for i in range(1, n):
        e[i - 1, i] = i * (n - i)
    return Sl2Triple(n=n, F=f, H=h, E=e)


def weight_basis(n: int, exact: bool = False):
    """Basis of sl_n graded by the standard triple.

    Returns the list of tuples (i, j, B_ij) with B_ij = ad_F^{i-j}(E^i) for
    i = 1..n-1 and j = i, i-1, ..., -i.  B_ij is an eigenvector of ad_H with
    eigenvalue 2j, the list has n^2 - 1 members, and tr(B_ij B_kl) vanishes
    unless (k, l) = (i, -j).

    With ``exact=True`` the matrices carry Python integers (object dtype), so
    trace identities can be checked without floating-point cancellation.
    """
    _check_n(n)
    triple = complete_sl2_triple(n)
    dtype = object if exact else complex
    f = triple.F.real.astype(int).astype(dtype) if exact else triple.F
    e = triple.E.real.astype(int).astype(dtype) if exact else triple.E
    out = []
    for i in range(1, n):
        cur = np.linalg.matrix_power(e, i)
        j = i
        out.append((i, j, cur))
        while j > -i:
            cur = f @ cur - cur @ f
            j -= 1
            out.append((i, j, cur))
    return out


def trace_pairing(x, y):
    """tr(xy); raises on mismatched sizes."""
    if x.shape[-1] != y.shape[-1]:
        raise InvalidDimensionError(
            f"trace pairing needs equal sizes, got {x.shape} and {y.shape}"
        )
    return np.trace(x @ y)


@lru_cache(maxsize=32)
def _sl_basis_cached(n):
    mats = []
    for a in range(n):
        for b in range(n):
            if a != b:
                m = np.zeros((n, n), dtype=complex)
                m[a, b] = 1.0
                mats.append(m)
    for a in range(n - 1):
        m = np.zeros((n, n), dtype=complex)
        m[a, a] = 1.0
        m[a + 1, a + 1] = -1.0
        mats.append(m)
    return tuple(mats)


def sl_basis(n: int):
    """Fixed basis of sl_n: E_ab (a != b) row-major, then diagonal differences."""
    _check_n(n)
    return list(_sl_basis_cached(n))


@lru_cache(maxsize=32)
def _sl_coords_pinv(n):
    b = np.stack([m.reshape(-1) for m in _sl_basis_cached(n)], axis=1)
    return b, np.linalg.pinv(b)


def _to_coords(n, x):
    _, pinv = _sl_coords_pinv(n)
    return pinv @ np.asarray(x, dtype=complex).reshape(-1)


def _from_coords(n, c):
    b, _ = _sl_coords_pinv(n)
    return (b @ c).reshape(n, n)


class AdOperator:
    """ad_x as a dense (n^2-1) x (n^2-1) matrix against ``sl_basis``."""

    def __init__(self, source: np.ndarray):
        self.source = np.asarray(source, dtype=complex)
        self.n = self.source.shape[0]
        basis = sl_basis(self.n)
        cols = [_to_coords(self.n, commutator(self.source, m)) for m in basis]
        self.matrix = np.stack(cols, axis=1)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return commutator(self.source, y)

    def _svd(self):
        return np.linalg.svd(self.matrix)

    def kernel_basis(self, tol: float = 1e-10):
        u, s, vh = self._svd()
        smax = s[0] if s.size and s[0] > 0 else 1.0
        rank = int(np.sum(s > tol * smax))
        return [_from_coords(self.n, vh[k].conj()) for k in range(rank, len(s))]

    def image_basis(self, tol: float = 1e-10):
        u, s, vh = self._svd()
        smax = s[0] if s.size and s[0] > 0 else 1.0
        rank = int(np.sum(s > tol * smax))
        return [_from_coords(self.n, u[:, k]) for k in range(rank)]

    def rank(self, tol: float = 1e-10) -> int:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        if s.size == 0 or s[0] == 0:
            return 0
        return int(np.sum(s > tol * s[0]))


def adjoint_operator(x: np.ndarray) -> AdOperator:
    """Linear operator y -> [x, y] with kernel/image extraction."""
    return AdOperator(x)


def centralizer_basis(x: np.ndarray, tol: float = 1e-10):
    """Orthonormalized basis of {y in sl_n : [x, y] = 0}."""
    return adjoint_operator(x).kernel_basis(tol=tol)


def is_principal_nilpotent(x: np.ndarray, tol: float = 1e-8, with_diagnostics: bool = False):
    """True iff x^n vanishes and the numerical rank of x is n-1.

    Rank uses singular values with the relative threshold tol * sigma_max;
    nilpotency compares x^n against tol * sigma_max^n.  ``with_diagnostics``
    additionally returns the measured gap data for near-threshold inputs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    s = np.linalg.svd(x, compute_uv=False)
    smax = s[0] if s[0] > 0 else 0.0
    power = np.linalg.matrix_power(x, n)
    if smax == 0.0:
        ok, diag = False, {"sigma": s, "nilpotency_defect": 0.0, "rank": 0}
    else:
        nil_defect = float(np.abs(power).max() / smax**n)
        rank = int(np.sum(s > tol * smax))
        ok = nil_defect <= tol and rank == n - 1
        diag = {
            "sigma": s,
            "nilpotency_defect": nil_defect,
            "rank": rank,
            "rank_margin": float(s[n - 2] / smax) if n >= 2 else 0.0,
        }
    if with_diagnostics:
        return ok, diag
    return ok


class Involutions:
    """The fixed involution gauge: J antidiagonal, sigma linear, rho antilinear.

    All three maps broadcast over leading axes, so they apply equally to a
    single matrix or to a whole grid of them.
    """

    def __init__(self, n: int):
        _check_n(n)
        self.n = n
        self.J = np.fliplr(np.eye(n)).astype(complex)

    def sigma(self, x):
        xt = np.swapaxes(np.asarray(x, dtype=complex), -1, -2)
        return -xt[..., ::-1, ::-1]

    def rho(self, x):
        return -np.conj(np.swapaxes(np.asarray(x, dtype=complex), -1, -2))

    def tau(self, x):
        return self.sigma(self.rho(x))


def involutions(n: int) -> Involutions:
    return Involutions(n)


def _mirror(n, a, b):
    return n - 1 - b, n - 1 - a


@lru_cache(maxsize=32)
def _sigma_eigenbases(n):
    """Frobenius-orthonormal bases of the +1/-1 eigenspaces of sigma."""
    plus, minus = [], []
    seen = set()
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(n):
        for b in range(n):
            if a == b or (a, b) in seen:
                continue
            ma, mb = _mirror(n, a, b)
            seen.add((a, b))
            e_ab = np.zeros((n, n), dtype=complex)
            e_ab[a, b] = 1.0
            if (ma, mb) == (a, b):
                minus.append(e_ab)  # sigma(E_ab) = -E_ab on the antidiagonal
                continue
            seen.add((ma, mb))
            e_m = np.zeros((n, n), dtype=complex)
            e_m[ma, mb] = 1.0
            plus.append((e_ab - e_m) * inv_sqrt2)
            minus.append((e_ab + e_m) * inv_sqrt2)
    # diagonal part: sigma(diag d) = -diag(reverse d), so the +1 eigenspace is
    # the anti-palindromic diagonals and the -1 eigenspace the palindromic
    # traceless ones.
    for i in range(n // 2):
        d = np.zeros(n)
        d[i], d[n - 1 - i] = 1.0, -1.0
        plus.append(np.diag(d).astype(complex) * inv_sqrt2)
    pal = []
    for i in range((n + 1) // 2):
        d = np.zeros(n)
        d[i] = 1.0
        d[n - 1 - i] = 1.0
        pal.append(d)
    for i in range(len(pal) - 1):
        d = pal[i] / pal[i].sum() - pal[i + 1] / pal[i + 1].sum()
        v = np.diag(d).astype(complex)
        for prev in minus:
            v = v - np.trace(prev.conj().T @ v) * prev
        nrm = np.sqrt(np.trace(v.conj().T @ v).real)
        if nrm > 1e-12:
            minus.append(v / nrm)
    m_dim = n * (n - 1) // 2
    assert len(plus) == m_dim and len(plus) + len(minus) == n * n - 1
    return tuple(plus), tuple(minus)


def sigma_plus_basis(n: int):
    """Frobenius-ONB of the sigma = +1 subspace of sl_n (dimension n(n-1)/2)."""
    return list(_sigma_eigenbases(n)[0])


def sigma_minus_basis(n: int):
    """Frobenius-ONB of the sigma = -1 subspace of sl_n."""
    return list(_sigma_eigenbases(n)[1])


def random_traceless(n: int, rng, scale: float = 1.0) -> np.ndarray:
    """Random complex traceless matrix, entries ~ scale."""
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    x *= scale
    return x - np.trace(x) / n * np.eye(n)
