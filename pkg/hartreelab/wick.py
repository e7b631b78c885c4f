"""
Wick calculus for (p,q)-monomials

    b(z) = < z^{(x)q}, b~ z^{(x)p} >

with b~ stored in symmetric-sector coordinates (a dim_q x dim_p matrix). The
Wick quantization is the normal-ordered polynomial in the eps-scaled ladder
operators, restricted sector by sector.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as spla
from scipy.special import gammaln

from hartreelab.exceptions import ValidationError, throw
from hartreelab.fock import (
    FockVector,
    check_hermitian,
    creation_field_matrix,
    dgamma_block,
    fock_offsets,
    sector_basis,
    sector_dimension,
    sector_power,
    sqrt_multinomials,
    symmetric_product,
    tensor_power,
)
from hartreelab.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class SymbolPQ:
    """A (p,q)-monomial given by its kernel from sector p to sector q."""

    p: int
    q: int
    kernel: np.ndarray
    d: int = field(default=0)

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            throw(f"degrees must be non-negative, got p={self.p}, q={self.q}")
        kernel = np.array(self.kernel, dtype=complex)
        if kernel.ndim == 0:
            kernel = kernel.reshape(1, 1)
        d = self.d
        if not d:
            d = _infer_modes(kernel.shape, self.p, self.q)
        expected = (sector_dimension(d, self.q), sector_dimension(d, self.p))
        if kernel.shape != expected:
            throw(f"kernel of a ({self.p},{self.q}) symbol on C^{d} must have shape {expected}, got {kernel.shape}")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "d", d)

    def __call__(self, z: np.ndarray) -> complex:
        return eval_symbol(self, z)

    def scaled(self, factor: complex) -> "SymbolPQ":
        return SymbolPQ(self.p, self.q, self.kernel * factor, self.d)


def _infer_modes(shape: tuple, p: int, q: int) -> int:
    if p == 0 and q == 0:
        throw("the mode count of a constant symbol must be given explicitly")
    for d in range(1, 64):
        if (sector_dimension(d, q, cap=None), sector_dimension(d, p, cap=None)) == shape:
            return d
    throw(f"no mode count matches kernel shape {shape} for degrees ({p},{q})")


@dataclass(frozen=True)
class SymbolSum:
    """Finite sum of monomials."""

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        if len({t.d for t in terms}) > 1:
            throw("all terms of a symbol sum must act on the same C^d")
        object.__setattr__(self, "terms", terms)

    def __call__(self, z: np.ndarray) -> complex:
        return sum((eval_symbol(t, z) for t in self.terms), 0j)

    def __add__(self, other: "SymbolSum") -> "SymbolSum":
        return SymbolSum(self.terms + tuple(as_terms(other)))

    @property
    def degrees(self) -> list:
        return sorted({(t.p, t.q) for t in self.terms})


def as_terms(b) -> tuple:
    if isinstance(b, SymbolPQ):
        return (b,)
    if isinstance(b, SymbolSum):
        return b.terms
    throw(f"expected a symbol, got {type(b).__name__}")


def eval_symbol(b: SymbolPQ, z: np.ndarray) -> complex:
    z = np.asarray(z, dtype=complex)
    if z.shape != (b.d,):
        throw(f"symbol acts on C^{b.d}, got a vector of shape {z.shape}")
    return complex(np.vdot(tensor_power(z, b.q), b.kernel @ tensor_power(z, b.p)))


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def ladder_tensor(d: int, n: int, k: int) -> np.ndarray:
    """
    T[beta, r, m] = prod_j sqrt(m_j! / r_j!) when m = r + beta, beta in sector k,
    r in sector n-k, m in sector n. Contracting over beta gives unscaled a^beta
    (lowering) or, transposed, (a*)^beta (raising).
    """
    lows = sector_basis(d, k)
    rest = sector_basis(d, n - k)
    full = sector_basis(d, n)
    total = lows.states[:, None, :] + rest.states[None, :, :]
    ranks = full.ranks(total)
    amps = np.exp(0.5 * (gammaln(total + 1) - gammaln(rest.states + 1)[None, :, :]).sum(axis=-1))
    out = np.zeros((lows.dim, rest.dim, full.dim))
    b_idx, r_idx = np.meshgrid(np.arange(lows.dim), np.arange(rest.dim), indexing="ij")
    out[b_idx, r_idx, ranks] = amps
    out.setflags(write=False)
    return out


def _normal_order_coefficients(b: SymbolPQ) -> np.ndarray:
    """c[alpha, beta] with b(z) = sum c conj(z)^alpha z^beta."""
    return b.kernel * sqrt_multinomials(b.d, b.q)[:, None] * sqrt_multinomials(b.d, b.p)[None, :]


def wick_matrix(b: SymbolPQ, n: int, epsilon: float, cutoff: int | None = None) -> np.ndarray:
    """b^Wick from sector n to sector n-p+q; the zero map when n < p."""
    target = n - b.p + b.q
    if cutoff is not None and target > cutoff:
        throw(f"b^Wick maps sector {n} to {target}, beyond the cutoff {cutoff}")
    shape = (sector_dimension(b.d, target), sector_dimension(b.d, n))
    if n < b.p:
        return np.zeros(shape, dtype=complex)
    lower = ladder_tensor(b.d, n, b.p)
    raise_ = ladder_tensor(b.d, target, b.q)
    coeffs = _normal_order_coefficients(b)
    out = np.einsum("ab,aro,brn->on", coeffs, raise_, lower, optimize=True)
    return epsilon ** ((b.p + b.q) / 2.0) * out


def wick_operator(b, n_max: int, epsilon: float) -> np.ndarray:
    """Dense matrix of b^Wick on sectors 0..n_max; blocks leaving the cutoff are dropped."""
    terms = as_terms(b)
    d = terms[0].d
    offsets = fock_offsets(d, n_max)
    out = np.zeros((offsets[-1], offsets[-1]), dtype=complex)
    for term in terms:
        for n in range(term.p, n_max + 1):
            target = n - term.p + term.q
            if target > n_max:
                continue
            out[offsets[target]:offsets[target + 1], offsets[n]:offsets[n + 1]] += wick_matrix(term, n, epsilon)
    return out


def wick_apply(b, v: FockVector) -> FockVector:
    """b^Wick v on the truncated space of v; components beyond the cutoff are dropped."""
    blocks = [np.zeros_like(s) for s in v.sectors]
    for term in as_terms(b):
        if term.d != v.d:
            throw("symbol and vector act on different C^d")
        for n, coeffs in enumerate(v.sectors):
            target = n - term.p + term.q
            if n < term.p or target > v.cutoff or not np.any(coeffs):
                continue
            blocks[target] = blocks[target] + wick_matrix(term, n, v.epsilon) @ coeffs
    return FockVector(v.d, v.epsilon, tuple(blocks))


# ---------------------------------------------------------------------------
# symbol algebra
# ---------------------------------------------------------------------------


def adjoint_symbol(b: SymbolPQ) -> SymbolPQ:
    """conj(b), a (q,p)-monomial with the adjoint kernel."""
    return SymbolPQ(b.q, b.p, b.kernel.conj().T, b.d)


def _propagator(A: np.ndarray, t: float) -> np.ndarray:
    A = check_hermitian(A, "one-particle operator")
    vals, vecs = spla.eigh(A)
    return (vecs * np.exp(-1j * t * vals)) @ vecs.conj().T


def evolve_symbol(b: SymbolPQ, A: np.ndarray, t: float) -> SymbolPQ:
    """b_t(z) = b(exp(-itA) z)."""
    if t == 0:
        return b
    U = _propagator(A, t)
    kernel = sector_power(U, b.q).conj().T @ b.kernel @ sector_power(U, b.p)
    return SymbolPQ(b.p, b.q, kernel, b.d)


def _lift(xi: np.ndarray, n: int, j: int) -> np.ndarray:
    """L(xi): w in sector n-j  ->  S_n(w (x) xi^{(x)j}) in sector n."""
    out = np.eye(sector_dimension(len(xi), n - j), dtype=complex)
    for level in range(n - j, n):
        out = creation_field_matrix(xi, level, 1.0) @ out
    return out * math.sqrt(math.factorial(n - j) / math.factorial(n))


def translation_terms(b: SymbolPQ, xi: np.ndarray):
    """
    Yield (i, j, monomial) with b(z + xi) = sum of the monomials, the (i,j) term
    being C(q,i) C(p,j) < S(z^{q-i} (x) xi^i), b~ S(z^{p-j} (x) xi^j) >.
    """
    xi = np.asarray(xi, dtype=complex)
    if xi.shape != (b.d,):
        throw(f"translation vector must lie in C^{b.d}")
    shifted = bool(np.any(xi))
    for i in range(b.q + 1):
        for j in range(b.p + 1):
            if (i or j) and not shifted:
                continue
            kernel = (
                math.comb(b.q, i) * math.comb(b.p, j)
                * _lift(xi, b.q, i).conj().T @ b.kernel @ _lift(xi, b.p, j)
            )
            yield i, j, SymbolPQ(b.p - j, b.q - i, kernel, b.d)


def translate_symbol(b: SymbolPQ, xi: np.ndarray) -> SymbolSum:
    return SymbolSum(tuple(term for _, _, term in translation_terms(b, xi)))


def interaction_symbol(q_kernel: np.ndarray, A: np.ndarray | None = None, s: float = 0.0) -> SymbolPQ:
    """q_s(z) = (1/2) q((e^{-isA} z)^{(x)2}, (e^{-isA} z)^{(x)2})."""
    q_kernel = check_hermitian(q_kernel, "two-body kernel")
    symbol = SymbolPQ(2, 2, 0.5 * q_kernel)
    if A is None or s == 0:
        return symbol
    return evolve_symbol(symbol, A, s)


def commutator_monomials(q_kernel: np.ndarray, xi: np.ndarray, s: float, A: np.ndarray) -> tuple:
    """
    q_1..q_4 with q_s(z + i eps pi xi) - q_s(z) = sum_j eps^j q_j(xi,s)[z].

    The j-th monomial collects the translation terms of total degree j in the
    shift i pi xi.
    """
    try:
        q_s = interaction_symbol(q_kernel, A, s)
    except ValidationError:
        throw("the two-body kernel must be symmetric (Hermitian on the two-particle sector)")
    shift = 1j * math.pi * np.asarray(xi, dtype=complex)
    groups = {k: [] for k in range(1, 5)}
    if np.any(shift):
        for i, j, term in translation_terms(q_s, shift):
            if i + j:
                groups[i + j].append(term)
    return tuple(SymbolSum(tuple(groups[k])) for k in range(1, 5))


def expansion_closed_form(q_kernel: np.ndarray, xi: np.ndarray, s: float, A: np.ndarray, z: np.ndarray) -> tuple:
    """Explicit values of q_1..q_4 at z."""
    U = _propagator(A, s)
    z_s = U @ np.asarray(z, dtype=complex)
    xi_s = U @ np.asarray(xi, dtype=complex)

    def form(u, v):
        return complex(np.vdot(u, q_kernel @ v))

    zz = tensor_power(z_s, 2)
    xx = tensor_power(xi_s, 2)
    xz = symmetric_product(xi_s, z_s)
    pi = math.pi
    return (
        -2 * pi * form(zz, xz).imag,
        -pi ** 2 * form(zz, xx).real + 2 * pi ** 2 * form(xz, xz),
        2 * pi ** 3 * form(xx, xz).imag,
        0.5 * pi ** 4 * form(xx, xx),
    )


def wick_form_bound(b: SymbolPQ, n: int, A: np.ndarray, m: int | None = None) -> float:
    """
    Smallest C with |<Phi, b^Wick Psi>| <= C |b~| |(A_1+1)^{1/2} Phi| |(A_1+1)^{1/2} Psi|
    on sector n at eps = 1/n.
    """
    if m is not None and m != n - b.p + b.q:
        throw(f"a ({b.p},{b.q}) symbol maps sector {n} to {n - b.p + b.q}, not {m}")
    if n < 1:
        throw("the form bound is measured on sectors n >= 1")
    kernel_norm = float(np.linalg.norm(b.kernel, 2)) if b.kernel.size else 0.0
    if kernel_norm == 0 or n < b.p:
        return 0.0
    m = n - b.p + b.q
    B = wick_matrix(b, n, 1.0 / n)
    left = _inverse_sqrt_weight(A, m)
    right = _inverse_sqrt_weight(A, n)
    return float(np.linalg.norm(left @ B @ right, 2)) / kernel_norm


def _inverse_sqrt_weight(A: np.ndarray, n: int) -> np.ndarray:
    """(A_1 + 1)^{-1/2} on symmetric vectors of sector n."""
    d = A.shape[0]
    dim = sector_dimension(d, n)
    if n == 0:
        return np.eye(dim)
    weight = dgamma_block(A, n, 1.0 / n) + np.eye(dim)
    vals, vecs = spla.eigh(weight)
    return (vecs / np.sqrt(vals)) @ vecs.conj().T
