"""Tree-weighted kernel norms on the discrete torus.

A kernel is a sparse multi-argument map on torus sites.  Its weighted
L1-Linf norm pins one argument, sums the absolute entries over the others,
and weights each entry by exp(m * tau) where tau is the minimal Steiner-tree
length connecting the entry's argument sites in the periodic lattice graph
(nearest-neighbor edges of length 1 on every axis).

Steiner lengths are exact via Dreyfus-Wagner dynamic programming over
terminal subsets; a minimum-spanning-tree upper bound is available as a fast
alternative.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Kernel",
    "SeriesNorm",
    "torus_distance",
    "steiner_tree_length",
    "kernel_norm",
    "coupling_constant",
    "series_norm",
    "read_kernel",
    "write_kernel",
]

STEINER_TERMINAL_CAP = 6

Site = tuple[int, int, int, int]


class KernelFormatError(ValueError):
    pass


def _normalize_site(site, extents) -> Site:
    if len(site) != len(extents):
        raise KernelFormatError(f"site {site} does not match extents {extents}")
    return tuple(int(c) % int(e) for c, e in zip(site, extents))


@dataclass(frozen=True)
class Kernel:
    """Sparse multi-argument kernel with finite support on a torus.

    entries maps tuples of ``arity`` sites (each a 4-tuple) to complex values.
    ``block_factor`` (the odd scaling factor L) is only needed for rescaling.
    """

    arity: int
    extents: tuple[int, int, int, int]
    entries: dict
    translation_invariant: bool = False
    block_factor: int | None = None

    def __post_init__(self):
        if self.arity < 1:
            raise KernelFormatError("arity must be >= 1")
        norm_entries = {}
        for key, val in self.entries.items():
            if len(key) != self.arity:
                raise KernelFormatError(f"entry {key} has {len(key)} arguments, expected {self.arity}")
            nkey = tuple(_normalize_site(site, self.extents) for site in key)
            norm_entries[nkey] = norm_entries.get(nkey, 0.0) + complex(val)
        object.__setattr__(self, "entries", norm_entries)

    # -- constructors ------------------------------------------------------
    @classmethod
    def from_entries(cls, arity, extents, entries, symmetrize=False, translation_invariant=False, block_factor=None):
        if symmetrize:
            sym: dict = {}
            perms = list(itertools.permutations(range(arity)))
            for key, val in entries.items():
                share = complex(val) / len(perms)
                for p in perms:
                    pkey = tuple(key[i] for i in p)
                    sym[pkey] = sym.get(pkey, 0.0) + share
            entries = sym
        return cls(arity, tuple(extents), dict(entries), translation_invariant, block_factor)

    @classmethod
    def delta(cls, extents, strength=1.0, arity=4, site=(0, 0, 0, 0), block_factor=None):
        """On-diagonal kernel: a single entry with all arguments equal."""
        key = tuple(tuple(site) for _ in range(arity))
        return cls(arity, tuple(extents), {key: complex(strength)}, translation_invariant=False, block_factor=block_factor)

    def diagonal_value(self) -> complex:
        """Sum of entries whose arguments all coincide at one site."""
        return sum((v for k, v in self.entries.items() if len(set(k)) == 1), 0.0 + 0.0j)

    def shifted_value(self, key, shift) -> complex:
        skey = tuple(_normalize_site(tuple(c + s for c, s in zip(site, shift)), self.extents) for site in key)
        return self.entries.get(skey, 0.0 + 0.0j)

    def check_translation_invariance(self, rng: np.random.Generator, trials: int = 20, atol: float = 1e-12) -> bool:
        """Spot-check: shifting every argument preserves stored values."""
        keys = list(self.entries)
        if not keys:
            return True
        for _ in range(trials):
            key = keys[rng.integers(len(keys))]
            shift = tuple(int(rng.integers(e)) for e in self.extents)
            if abs(self.entries[key] - self.shifted_value(key, shift)) > atol:
                return False
        return True


# ---------------------------------------------------------------------------
# torus graph metric and Steiner lengths
# ---------------------------------------------------------------------------

def torus_distance(a, b, extents) -> int:
    """Graph distance on the periodic lattice: per-axis wrapped L1."""
    total = 0
    for ca, cb, N in zip(a, b, extents):
        d = abs(int(ca) - int(cb)) % int(N)
        total += min(d, int(N) - d)
    return total


def _site_index(site, extents) -> int:
    idx = 0
    for c, N in zip(site, extents):
        idx = idx * int(N) + (int(c) % int(N))
    return idx


def _all_distances_from(site, extents) -> np.ndarray:
    """Vector of graph distances from one site to every site (row-major)."""
    per_axis = []
    for c, N in zip(site, extents):
        d = np.abs(np.arange(N) - (int(c) % N))
        per_axis.append(np.minimum(d, N - d))
    acc = per_axis[0]
    for nxt in per_axis[1:]:
        acc = (acc[:, None] + nxt[None, :]).reshape(-1)
    return acc


def _min_plus(seed: np.ndarray, extents) -> np.ndarray:
    """relax[v] = min_u seed[u] + dist(u, v), computed axis by axis.

    The torus metric is a sum of per-axis wrapped distances, so the full
    relaxation factorizes into four one-dimensional min-plus passes.
    """
    dims = tuple(int(N) for N in extents)
    arr = seed.reshape(dims)
    for axis, N in enumerate(dims):
        d = np.abs(np.arange(N)[:, None] - np.arange(N)[None, :])
        dist1d = np.minimum(d, N - d)
        moved = np.moveaxis(arr, axis, 0)
        rest = moved.shape[1:]
        relaxed = (dist1d[:, :, None] + moved.reshape(N, -1)[None, :, :]).min(axis=1)
        arr = np.moveaxis(relaxed.reshape((N,) + rest), 0, axis)
    return arr.reshape(-1)


def steiner_tree_length(points, extents, method: str = "exact") -> float:
    """Minimal length of a lattice tree containing all the given sites.

    method="exact": Dreyfus-Wagner dynamic programming (terminals capped at
    6).  method="mst": minimum spanning tree in the metric closure, an upper
    bound.
    """
    pts = []
    seen = set()
    for p in points:
        q = _normalize_site(tuple(p), extents)
        if q not in seen:
            seen.add(q)
            pts.append(q)
    t = len(pts)
    if t <= 1:
        return 0.0
    if t == 2:
        return float(torus_distance(pts[0], pts[1], extents))
    if method == "mst":
        return _mst_length(pts, extents)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    if t > STEINER_TERMINAL_CAP:
        raise ValueError(f"exact Steiner computation capped at {STEINER_TERMINAL_CAP} terminals, got {t}")

    n_sites = int(np.prod(extents))
    # T[mask] = per-site vector: optimal tree containing terminals in mask plus that site
    tables: dict[int, np.ndarray] = {}
    for i, p in enumerate(pts):
        tables[1 << i] = _all_distances_from(p, extents).astype(np.int64)
    full = (1 << t) - 1
    for mask in sorted(range(1, full + 1), key=lambda m: bin(m).count("1")):
        if mask in tables:
            continue
        best = np.full(n_sites, np.iinfo(np.int64).max // 4, dtype=np.int64)
        sub = (mask - 1) & mask
        while sub > 0:
            other = mask ^ sub
            if sub < other:  # each unordered split once
                np.minimum(best, tables[sub] + tables[other], out=best)
            sub = (sub - 1) & mask
        tables[mask] = _min_plus(best, extents)
    return float(tables[full][_site_index(pts[0], extents)])


def _mst_length(pts, extents) -> float:
    t = len(pts)
    dist = np.zeros((t, t))
    for i in range(t):
        for j in range(i + 1, t):
            dist[i, j] = dist[j, i] = torus_distance(pts[i], pts[j], extents)
    in_tree = [0]
    total = 0.0
    best = dist[0].copy()
    while len(in_tree) < t:
        best[in_tree] = np.inf
        j = int(np.argmin(best))
        total += best[j]
        in_tree.append(j)
        best = np.minimum(best, dist[j])
    return float(total)


# ---------------------------------------------------------------------------
# weighted norms
# ---------------------------------------------------------------------------

def kernel_norm(V: Kernel, m: float) -> float:
    """max over pinned argument of sum_{others} |V| * exp(m * tree length)."""
    if m < 0:
        raise ValueError("decay rate m must be >= 0")
    if not V.entries:
        return 0.0
    tau_cache: dict[tuple, float] = {}

    def tau(key) -> float:
        pts = tuple(sorted(set(key)))
        if pts not in tau_cache:
            tau_cache[pts] = steiner_tree_length(pts, V.extents)
        return tau_cache[pts]

    best = 0.0
    for j in range(V.arity):
        sums: dict[Site, float] = {}
        for key, val in V.entries.items():
            w = abs(val) if m == 0 else abs(val) * float(np.exp(m * tau(key)))
            pin = key[j]
            sums[pin] = sums.get(pin, 0.0) + w
        best = max(best, max(sums.values()))
    return best


def coupling_constant(V: Kernel, m: float) -> float:
    """Twice the kernel norm at doubled decay rate."""
    return 2.0 * kernel_norm(V, 2.0 * m)


@dataclass(frozen=True)
class SeriesNorm:
    """Weighted sum of per-degree kernel norms for a power series."""

    terms: tuple  # of (r, s, norm_value)
    kappa: float
    kappa_prime: float
    total: float


def series_norm(terms, kappa: float, kappa_prime: float) -> SeriesNorm:
    """sum of norm * kappa^r * kappa_prime^s over terms (r, s, norm).

    Terms with r = s = 0 are rejected: the series carries no constant part.
    """
    terms = tuple((int(r), int(s), float(v)) for r, s, v in terms)
    total = 0.0
    for r, s, v in terms:
        if r + s <= 0:
            raise ValueError("series terms must have r + s > 0")
        if r < 0 or s < 0 or v < 0:
            raise ValueError("degrees and norms must be nonnegative")
        total += v * kappa**r * kappa_prime**s
    return SeriesNorm(terms=terms, kappa=kappa, kappa_prime=kappa_prime, total=total)


# ---------------------------------------------------------------------------
# sparse text format: one entry per line, arity*4 site coordinates + re + im
# ---------------------------------------------------------------------------

def read_kernel(path, extents, arity=None, symmetrize=True, block_factor=None) -> Kernel:
    """Read the sparse text format.

    Lines starting with ``#`` and blank lines are skipped.  Each entry line
    holds arity*4 integers (the argument sites) followed by the real and
    imaginary parts.  Arity is inferred from the first entry when not given.
    Ingestion applies permutation symmetrization unless disabled.
    """
    entries: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if arity is None:
                if (len(tok) - 2) % 4 != 0 or len(tok) < 6:
                    raise KernelFormatError(f"line {lineno}: cannot infer arity from {len(tok)} tokens")
                arity = (len(tok) - 2) // 4
            if len(tok) != 4 * arity + 2:
                raise KernelFormatError(f"line {lineno}: expected {4 * arity + 2} tokens, got {len(tok)}")
            coords = [int(v) for v in tok[: 4 * arity]]
            re, im = float(tok[-2]), float(tok[-1])
            key = tuple(tuple(coords[4 * j : 4 * j + 4]) for j in range(arity))
            entries[key] = entries.get(key, 0.0) + complex(re, im)
    if arity is None:
        raise KernelFormatError("empty kernel file")
    return Kernel.from_entries(arity, extents, entries, symmetrize=symmetrize, block_factor=block_factor)


def write_kernel(V: Kernel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# arity {V.arity} extents {' '.join(str(e) for e in V.extents)}\n")
        for key, val in sorted(V.entries.items()):
            coords = " ".join(str(c) for site in key for c in site)
            fh.write(f"{coords} {val.real!r} {val.imag!r}\n")
