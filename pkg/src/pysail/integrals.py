"""Gaussian integrals by McMurchie–Davidson Hermite recursion.

Products of two Cartesian Gaussians are expanded in Hermite Gaussians
(coefficients E^{ij}_t per direction); overlap, kinetic and dipole integrals
follow from the expansion directly, nuclear attraction and electron repulsion
from the Hermite Coulomb integrals R_{tuv} built on the Boys function.
"""

import bisect
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .boys import boys
from .constants import DEFAULT_MAX_ERI_BYTES, LINEAR_DEPENDENCE_FLOOR
from .exceptions import LinearDependenceException, MemoryCapException
from .models import Molecule, Shell

CARTESIAN = {0: ((0, 0, 0),), 1: ((1, 0, 0), (0, 1, 0), (0, 0, 1))}

_KET_CHUNK = 32


def hermite_expansion(i_max: int, j_max: int, a, b, Qx) -> np.ndarray:
    """Hermite expansion coefficients E[i, j, t] of 1D Gaussian products.

    a, b are exponents and Qx = A_x - B_x the center separation, all broadcast
    together; the trailing axes of the result follow their broadcast shape."""
    a, b, Qx = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (a, b, Qx)))
    p = a + b
    XPA = -b * Qx / p
    XPB = a * Qx / p
    one_2p = 0.5 / p
    n_t = i_max + j_max + 2
    E = np.zeros((i_max + 1, j_max + 1, n_t) + p.shape)
    E[0, 0, 0] = np.exp(-a * b / p * Qx * Qx)
    for i in range(i_max + 1):
        for j in range(j_max + 1):
            if i == 0 and j == 0:
                continue
            if i > 0:
                prev, shift = E[i - 1, j], XPA
            else:
                prev, shift = E[i, j - 1], XPB
            for t in range(i + j + 1):
                value = shift * prev[t] + (t + 1) * prev[t + 1]
                if t > 0:
                    value = value + one_2p * prev[t - 1]
                E[i, j, t] = value
    return E[:, :, : n_t - 1]


def hermite_coulomb(L: int, alpha, PC: np.ndarray) -> np.ndarray:
    """Hermite Coulomb integrals R_{tuv} for t + u + v <= L.

    PC has shape (..., 3); the result has shape (L+1, L+1, L+1, ...)."""
    X, Y, Z = PC[..., 0], PC[..., 1], PC[..., 2]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), X.shape)
    F = boys(L, alpha * (X * X + Y * Y + Z * Z))
    R: Dict[Tuple[int, int, int, int], np.ndarray] = {}
    for n in range(L + 1):
        R[n, 0, 0, 0] = (-2 * alpha) ** n * F[n]
    for total in range(1, L + 1):
        for n in range(L - total + 1):
            for t in range(total + 1):
                for u in range(total - t + 1):
                    v = total - t - u
                    if t > 0:
                        value = X * R[n + 1, t - 1, u, v]
                        if t > 1:
                            value = value + (t - 1) * R[n + 1, t - 2, u, v]
                    elif u > 0:
                        value = Y * R[n + 1, t, u - 1, v]
                        if u > 1:
                            value = value + (u - 1) * R[n + 1, t, u - 2, v]
                    else:
                        value = Z * R[n + 1, t, u, v - 1]
                        if v > 1:
                            value = value + (v - 1) * R[n + 1, t, u, v - 2]
                    R[n, t, u, v] = value
    out = np.zeros((L + 1, L + 1, L + 1) + X.shape)
    for (n, t, u, v), value in R.items():
        if n == 0:
            out[t, u, v] = value
    return out


def ao_offsets(shells: Sequence[Shell]) -> List[int]:
    offsets = [0]
    for shell in shells:
        offsets.append(offsets[-1] + shell.size)
    return offsets


@dataclass
class _ShellPair:
    """Primitive-pair data of two shells, contraction coefficients folded in"""

    first: int
    second: int
    L: int
    p: np.ndarray  # (K,)
    P: np.ndarray  # (K, 3)
    E: np.ndarray  # (na, nb, L+1, L+1, L+1, K)

    @property
    def key(self) -> Tuple[int, int, int]:
        return self.E.shape[0], self.E.shape[1], self.p.shape[0]


def _pair_expansions(A: Shell, B: Shell, extra: int = 0):
    """Per-direction Hermite tables of a shell pair, flattened over primitive pairs"""
    a = np.asarray(A.exponents)[:, None]
    b = np.asarray(B.exponents)[None, :]
    center_a = np.asarray(A.center)
    center_b = np.asarray(B.center)
    tables = [
        hermite_expansion(
            A.angular_momentum,
            B.angular_momentum + extra,
            a,
            b,
            center_a[d] - center_b[d],
        ).reshape(A.angular_momentum + 1, B.angular_momentum + extra + 1, -1, a.size * b.size)
        for d in range(3)
    ]
    p = (a + b).reshape(-1)
    P = ((a[..., None] * center_a + b[..., None] * center_b) / (a + b)[..., None]).reshape(-1, 3)
    cc = (np.asarray(A.coefficients)[:, None] * np.asarray(B.coefficients)[None, :]).reshape(-1)
    return tables, p, P, cc


def _hermite_product(tables, comps_a, comps_b, L: int) -> np.ndarray:
    Ex, Ey, Ez = tables
    K = Ex.shape[-1]
    out = np.zeros((len(comps_a), len(comps_b), L + 1, L + 1, L + 1, K))
    for ia, (ax, ay, az) in enumerate(comps_a):
        for ib, (bx, by, bz) in enumerate(comps_b):
            ex = Ex[ax, bx, : L + 1]
            ey = Ey[ay, by, : L + 1]
            ez = Ez[az, bz, : L + 1]
            out[ia, ib] = ex[:, None, None] * ey[None, :, None] * ez[None, None, :]
    return out


def _shell_pair(A: Shell, B: Shell, first: int, second: int) -> _ShellPair:
    tables, p, P, cc = _pair_expansions(A, B)
    L = A.angular_momentum + B.angular_momentum
    E = _hermite_product(
        tables, CARTESIAN[A.angular_momentum], CARTESIAN[B.angular_momentum], L
    )
    return _ShellPair(first, second, L, p, P, E * cc)


def one_electron_integrals(shells: Sequence[Shell], molecule: Molecule):
    """Returns (S, T, Vne, D) with D stacked as (3, B, B) electron-position integrals"""
    offsets = ao_offsets(shells)
    n = offsets[-1]
    S = np.zeros((n, n))
    T = np.zeros((n, n))
    V = np.zeros((n, n))
    D = np.zeros((3, n, n))
    charges = np.asarray(molecule.numbers, dtype=np.float64)
    centers = molecule.positions

    for i, A in enumerate(shells):
        for j in range(i + 1):
            B = shells[j]
            la, lb = A.angular_momentum, B.angular_momentum
            tables, p, P, cc = _pair_expansions(A, B, extra=2)
            root = np.sqrt(np.pi / p)
            s1d = [table[:, :, 0] * root for table in tables]  # (la+1, lb+3, K)
            m1d = [tables[d][:, :, 1] * root + P[:, d] * s1d[d] for d in range(3)]

            L = la + lb
            E = _hermite_product(tables, CARTESIAN[la], CARTESIAN[lb], L)
            R = hermite_coulomb(L, p[None, :], P[None, :, :] - centers[:, None, :])
            potential = -np.einsum("abtuvk,tuvck,c->abk", E, R, charges) * (2 * np.pi / p)

            bexp = np.asarray(B.exponents)[None, :].repeat(len(A.exponents), 0).reshape(-1)
            block = np.zeros((4 + 3, A.size, B.size))
            for ia, comp_a in enumerate(CARTESIAN[la]):
                for ib, comp_b in enumerate(CARTESIAN[lb]):
                    overlaps = [s1d[d][comp_a[d], comp_b[d]] for d in range(3)]
                    kinetic = []
                    for d in range(3):
                        ja, jb = comp_a[d], comp_b[d]
                        value = -2 * bexp**2 * s1d[d][ja, jb + 2] + bexp * (2 * jb + 1) * s1d[d][ja, jb]
                        if jb >= 2:
                            value = value - 0.5 * jb * (jb - 1) * s1d[d][ja, jb - 2]
                        kinetic.append(value)
                    sx, sy, sz = overlaps
                    block[0, ia, ib] = np.sum(cc * sx * sy * sz)
                    block[1, ia, ib] = np.sum(
                        cc * (kinetic[0] * sy * sz + sx * kinetic[1] * sz + sx * sy * kinetic[2])
                    )
                    block[2, ia, ib] = np.sum(cc * potential[ia, ib])
                    for d in range(3):
                        factors = list(overlaps)
                        factors[d] = m1d[d][comp_a[d], comp_b[d]]
                        block[4 + d, ia, ib] = np.sum(cc * factors[0] * factors[1] * factors[2])

            rows = slice(offsets[i], offsets[i + 1])
            cols = slice(offsets[j], offsets[j + 1])
            for target, values in ((S, block[0]), (T, block[1]), (V, block[2])):
                target[rows, cols] = values
                target[cols, rows] = values.T
            for d in range(3):
                D[d, rows, cols] = block[4 + d]
                D[d, cols, rows] = block[4 + d].T
    return S, T, V, D


def _mirror_canonical(eri: np.ndarray) -> np.ndarray:
    """Rebuilds every entry from its canonical (μ>=ν, λ>=σ, μν>=λσ) representative"""
    n = eri.shape[0]
    idx = np.arange(n)
    mu, nu = idx[:, None, None, None], idx[None, :, None, None]
    lam, sig = idx[None, None, :, None], idx[None, None, None, :]
    eri = np.where(mu >= nu, eri, eri.transpose(1, 0, 2, 3))
    eri = np.where(lam >= sig, eri, eri.transpose(0, 1, 3, 2))
    bra = np.maximum(mu, nu) * (n + 1) + np.minimum(mu, nu)
    ket = np.maximum(lam, sig) * (n + 1) + np.minimum(lam, sig)
    return np.where(bra >= ket, eri, eri.transpose(2, 3, 0, 1))


def two_electron_integrals(
    shells: Sequence[Shell],
    max_bytes: int = DEFAULT_MAX_ERI_BYTES,
    logger: logging.Logger = None,
) -> np.ndarray:
    """Dense (μν|λσ) tensor; each unique shell quartet is evaluated once and mirrored"""
    logger = logger or logging.getLogger(__package__)
    offsets = ao_offsets(shells)
    n = offsets[-1]
    required = n**4 * 8
    if required > max_bytes:
        raise MemoryCapException(required, max_bytes)

    pairs = [
        _shell_pair(shells[i], shells[j], i, j) for i in range(len(shells)) for j in range(i + 1)
    ]
    for pair in pairs:
        pair_sign = np.array([(-1.0) ** k for k in range(pair.L + 1)])
        pair.signed = (
            pair.E
            * pair_sign[:, None, None, None]
            * pair_sign[None, :, None, None]
            * pair_sign[None, None, :, None]
        )
    classes: Dict[tuple, List[int]] = {}
    for index, pair in enumerate(pairs):
        classes.setdefault(pair.key, []).append(index)

    eri = np.zeros((n, n, n, n))
    for bra_index, bra in enumerate(pairs):
        for members in classes.values():
            stop = bisect.bisect_right(members, bra_index)
            for start in range(0, stop, _KET_CHUNK):
                kets = [pairs[k] for k in members[start : min(stop, start + _KET_CHUNK)]]
                blocks = _quartet_blocks(bra, kets)
                for ket, block in zip(kets, blocks):
                    _store(eri, offsets, bra, ket, block)
    logger.debug("Evaluated %i shell pairs for %i basis functions", len(pairs), n)
    return _mirror_canonical(eri)


def _quartet_blocks(bra: _ShellPair, kets: List[_ShellPair]) -> np.ndarray:
    q = np.stack([ket.p for ket in kets])  # (N, Kcd)
    Q = np.stack([ket.P for ket in kets])  # (N, Kcd, 3)
    signed = np.stack([ket.signed for ket in kets])  # (N, nc, nd, Lk+1, Lk+1, Lk+1, Kcd)
    Lk = kets[0].L
    p = bra.p[:, None, None]
    alpha = p * q / (p + q)
    PQ = bra.P[:, None, None, :] - Q[None, :, :, :]
    R = hermite_coulomb(bra.L + Lk, alpha, PQ)
    prefactor = 2 * np.pi**2.5 / (p * q * np.sqrt(p + q))
    idx = np.arange(bra.L + 1)[:, None] + np.arange(Lk + 1)[None, :]
    gathered = R[
        idx[:, None, None, :, None, None],
        idx[None, :, None, None, :, None],
        idx[None, None, :, None, None, :],
    ]
    return np.einsum(
        "abtuvk,ncdxyzl,tuvxyzknl,knl->nabcd", bra.E, signed, gathered, prefactor, optimize=True
    )


def _store(eri: np.ndarray, offsets: List[int], bra: _ShellPair, ket: _ShellPair, block: np.ndarray):
    a = slice(offsets[bra.first], offsets[bra.first + 1])
    b = slice(offsets[bra.second], offsets[bra.second + 1])
    c = slice(offsets[ket.first], offsets[ket.first + 1])
    d = slice(offsets[ket.second], offsets[ket.second + 1])
    eri[a, b, c, d] = block
    eri[b, a, c, d] = block.transpose(1, 0, 2, 3)
    eri[a, b, d, c] = block.transpose(0, 1, 3, 2)
    eri[b, a, d, c] = block.transpose(1, 0, 3, 2)
    eri[c, d, a, b] = block.transpose(2, 3, 0, 1)
    eri[d, c, a, b] = block.transpose(3, 2, 0, 1)
    eri[c, d, b, a] = block.transpose(2, 3, 1, 0)
    eri[d, c, b, a] = block.transpose(3, 2, 1, 0)


def inverse_sqrt_overlap(S: np.ndarray, floor: float = LINEAR_DEPENDENCE_FLOOR):
    """Symmetric orthogonalizer X = S^(-1/2); returns (X, S^(1/2))"""
    S = np.asarray(S, dtype=np.float64)
    eigenvalues, vectors = np.linalg.eigh(0.5 * (S + S.T))
    if eigenvalues.min() < floor:
        raise LinearDependenceException(
            f"smallest overlap eigenvalue {eigenvalues.min():.3e} is below {floor:.0e}"
        )
    X = (vectors / np.sqrt(eigenvalues)) @ vectors.T
    S_half = (vectors * np.sqrt(eigenvalues)) @ vectors.T
    return 0.5 * (X + X.T), 0.5 * (S_half + S_half.T)


def nuclear_repulsion(molecule: Molecule) -> float:
    charges = np.asarray(molecule.numbers, dtype=np.float64)
    diff = molecule.positions[:, None, :] - molecule.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    upper = np.triu_indices(molecule.n_atoms, k=1)
    return float(np.sum(charges[upper[0]] * charges[upper[1]] / dist[upper]))
