"""Exact adversarial-objective calculations on finite spaces.

A :class:`DiscreteWorld` holds finite data and latent spaces with their
marginals and deterministic encoder/generator lookup tables. Everything here
is computed by enumeration, so the optimal-discriminator, Jensen-Shannon and
l0-autoencoder identities can be checked to round-off.

Convention: 0 * log 0 = 0 everywhere.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

LOG4 = float(np.log(4.0))
MEASURE_TOL = 1e-12
IDENTITY_TOL = 1e-9
MAX_PAIRS = 10**7


class WorldError(ValueError):
    pass


@dataclass
class DiscreteWorld:
    p_x: np.ndarray
    p_z: np.ndarray
    E_map: np.ndarray
    G_map: np.ndarray

    def __post_init__(self):
        self.p_x = np.asarray(self.p_x, dtype=np.float64)
        self.p_z = np.asarray(self.p_z, dtype=np.float64)
        self.E_map = np.asarray(self.E_map, dtype=np.int64)
        self.G_map = np.asarray(self.G_map, dtype=np.int64)
        for name, p in (("p_x", self.p_x), ("p_z", self.p_z)):
            if p.ndim != 1 or p.size == 0:
                raise WorldError(f"{name} must be a non-empty vector")
            if np.any(p < 0) or abs(p.sum() - 1.0) > MEASURE_TOL:
                raise WorldError(f"{name} must be nonnegative and sum to 1 (sums to {p.sum()!r})")
        if self.E_map.shape != (self.m,) or np.any(self.E_map < 0) or np.any(self.E_map >= self.n):
            raise WorldError("E_map must send each of the m data points into range(n)")
        if self.G_map.shape != (self.n,) or np.any(self.G_map < 0) or np.any(self.G_map >= self.m):
            raise WorldError("G_map must send each of the n latent points into range(m)")

    @property
    def m(self):
        return self.p_x.size

    @property
    def n(self):
        return self.p_z.size

    @classmethod
    def random(cls, rng, max_m=6, max_n=6, sparsity=0.3):
        """Random world; some marginal entries are zeroed to exercise support effects."""
        m = int(rng.integers(1, max_m + 1))
        n = int(rng.integers(1, max_n + 1))

        def marginal(k):
            p = rng.random(k)
            p[rng.random(k) < sparsity] = 0.0
            if p.sum() == 0:
                p[rng.integers(k)] = 1.0
            return p / p.sum()

        return cls(marginal(m), marginal(n), rng.integers(0, n, m), rng.integers(0, m, n))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            spec = json.load(fh)
        unknown = set(spec) - {"p_x", "p_z", "E", "G"}
        if unknown:
            raise WorldError(f"unknown world keys {sorted(unknown)}")
        return cls(spec["p_x"], spec["p_z"], spec["E"], spec["G"])

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump({"p_x": self.p_x.tolist(), "p_z": self.p_z.tolist(),
                       "E": self.E_map.tolist(), "G": self.G_map.tolist()}, fh, indent=2)


@dataclass
class DiscriminatorTable:
    values: np.ndarray  # m x n, NaN outside the defined region
    defined: np.ndarray  # boolean mask, the union support of both measures

    def __post_init__(self):
        v = self.values[self.defined]
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("discriminator values must lie in [0, 1]")


def joint_measures(world: DiscreteWorld):
    m, n = world.m, world.n
    p_ex = np.zeros((m, n))
    p_gz = np.zeros((m, n))
    p_ex[np.arange(m), world.E_map] = world.p_x
    p_gz[world.G_map, np.arange(n)] = world.p_z
    return p_ex, p_gz


def optimal_discriminator(p_ex, p_gz) -> DiscriminatorTable:
    total = p_ex + p_gz
    defined = total > 0
    if not defined.any():
        raise ValueError("union support is empty")
    values = np.full(total.shape, np.nan)
    values[defined] = p_ex[defined] / total[defined]
    return DiscriminatorTable(values, defined)


def _xlogy(p, q):
    """Elementwise p * log q with 0 * log(anything) = 0 and p * log 0 = -inf."""
    out = np.zeros_like(p)
    pos = p > 0
    with np.errstate(divide="ignore"):
        out[pos] = p[pos] * np.log(q[pos])
    return out


def value(world: DiscreteWorld, D: DiscriminatorTable) -> float:
    """Exact minimax value for discriminator table ``D`` (may be -inf)."""
    p_ex, p_gz = joint_measures(world)
    need = (p_ex > 0) | (p_gz > 0)
    if np.any(need & ~D.defined):
        raise ValueError("discriminator undefined on positive-mass cells")
    d = np.where(D.defined, D.values, 0.5)
    return float(_xlogy(p_ex, d).sum() + _xlogy(p_gz, 1.0 - d).sum())


def values_many(world: DiscreteWorld, tables):
    """Exact value for a stack of full discriminator tables (k x m x n) at once."""
    p_ex, p_gz = joint_measures(world)
    tables = np.asarray(tables, dtype=np.float64)
    if np.any(tables < 0) or np.any(tables > 1):
        raise ValueError("discriminator values must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        enc = np.where(p_ex > 0, p_ex * np.log(tables), 0.0)
        gen = np.where(p_gz > 0, p_gz * np.log1p(-tables), 0.0)
    return (enc + gen).sum(axis=(1, 2))


def kl(p, q):
    return float(_xlogy(p, p).sum() - _xlogy(p, q).sum())


def jsd(p, q):
    mid = 0.5 * (p + q)
    return 0.5 * (kl(p, mid) + kl(q, mid))


def ceg_from_measures(p_ex, p_gz):
    mid = 0.5 * (p_ex + p_gz)
    return kl(p_ex, mid) + kl(p_gz, mid) - LOG4


def ceg(world: DiscreteWorld) -> float:
    """Objective under the optimal discriminator via the divergence form."""
    return ceg_from_measures(*joint_measures(world))


@dataclass
class InversionReport:
    x_fail_mass: float
    z_fail_mass: float

    @property
    def ok(self):
        return self.x_fail_mass == 0 and self.z_fail_mass == 0


def check_inversion(world: DiscreteWorld) -> InversionReport:
    xs = np.arange(world.m)
    zs = np.arange(world.n)
    x_fail = world.G_map[world.E_map] != xs
    z_fail = world.E_map[world.G_map] != zs
    return InversionReport(float(world.p_x[x_fail].sum()), float(world.p_z[z_fail].sum()))


def l0_autoencoder_value(world: DiscreteWorld) -> float:
    """Objective rewritten with indicator (l0) reconstruction terms."""
    p_ex, p_gz = joint_measures(world)
    f = optimal_discriminator(p_ex, p_gz).values
    xs = np.arange(world.m)
    zs = np.arange(world.n)
    E, G = world.E_map, world.G_map
    x_ok = (world.p_z[E] > 0) & (G[E] == xs) & (world.p_x > 0)
    z_ok = (world.p_x[G] > 0) & (E[G] == zs) & (world.p_z > 0)
    total = 0.0
    if x_ok.any():
        total += float(np.sum(world.p_x[x_ok] * np.log(f[xs[x_ok], E[x_ok]])))
    if z_ok.any():
        total += float(np.sum(world.p_z[z_ok] * np.log(1.0 - f[G[z_ok], zs[z_ok]])))
    return total


def _all_maps(size_in, size_out):
    return itertools.product(range(size_out), repeat=size_in)


def brute_force_optimum(m, n, p_x=None, p_z=None, tol=MEASURE_TOL):
    """Minimize the divergence objective over every deterministic (E, G) pair.

    Returns ``(min_value, minimizers)`` with minimizers as a sorted list of
    ``(E_map, G_map)`` tuples whose value is within ``tol`` of the minimum.
    """
    pairs = n**m * m**n
    if pairs > MAX_PAIRS:
        raise ValueError(f"{pairs} map pairs exceeds the enumeration guard of {MAX_PAIRS}")
    p_x = np.full(m, 1.0 / m) if p_x is None else np.asarray(p_x, dtype=np.float64)
    p_z = np.full(n, 1.0 / n) if p_z is None else np.asarray(p_z, dtype=np.float64)
    results = []
    for e in _all_maps(m, n):
        for g in _all_maps(n, m):
            results.append((ceg(DiscreteWorld(p_x, p_z, e, g)), e, g))
    best = min(r[0] for r in results)
    minimizers = sorted((e, g) for v, e, g in results if v - best <= tol)
    return best, minimizers


def generalized_measures(world: DiscreteWorld, gx, gz, m_prime=None, n_prime=None):
    """Joint measures over the reduced spaces seen by the discriminator.

    ``world.E_map`` takes values in the reduced latent space and
    ``world.G_map`` in the reduced data space; ``gx``/``gz`` map the full
    spaces onto the reduced ones.
    """
    gx = np.asarray(gx, dtype=np.int64)
    gz = np.asarray(gz, dtype=np.int64)
    if gx.shape != (world.m,) or gz.shape != (world.n,):
        raise WorldError("gx must cover every data point and gz every latent point")
    m_prime = int(max(gx.max(), world.G_map.max()) + 1) if m_prime is None else m_prime
    n_prime = int(max(gz.max(), world.E_map.max()) + 1) if n_prime is None else n_prime
    p_ex = np.zeros((m_prime, n_prime))
    p_gz = np.zeros((m_prime, n_prime))
    np.add.at(p_ex, (gx, world.E_map), world.p_x)
    np.add.at(p_gz, (world.G_map, gz), world.p_z)
    return p_ex, p_gz


def generalized_brute_force(p_x, p_z, gx, gz, tol=MEASURE_TOL):
    """Exhaustive minimum over E: data -> reduced latent, G: latent -> reduced data."""
    p_x = np.asarray(p_x, dtype=np.float64)
    p_z = np.asarray(p_z, dtype=np.float64)
    gx = np.asarray(gx)
    gz = np.asarray(gz)
    m, n = p_x.size, p_z.size
    m_prime, n_prime = int(gx.max()) + 1, int(gz.max()) + 1
    if n_prime**m * m_prime**n > MAX_PAIRS:
        raise ValueError("enumeration guard exceeded")
    results = []
    for e in _all_maps(m, n_prime):
        for g in _all_maps(n, m_prime):
            w = DiscreteWorld(p_x, p_z, e, g)
            results.append((ceg_from_measures(*generalized_measures(w, gx, gz, m_prime, n_prime)), e, g))
    best = min(r[0] for r in results)
    return best, sorted((e, g) for v, e, g in results if v - best <= tol)


def generalized_inversion_holds(p_x, p_z, E_map, G_map, gx, gz):
    """Check the generalized inversion condition on both supports."""
    E_map, G_map = np.asarray(E_map), np.asarray(G_map)
    gx, gz = np.asarray(gx), np.asarray(gz)
    supp_x = np.flatnonzero(np.asarray(p_x) > 0)
    supp_z = np.flatnonzero(np.asarray(p_z) > 0)
    for x in supp_x:
        if not any(E_map[x] == gz[z] and G_map[z] == gx[x] for z in supp_z):
            return False
    for z in supp_z:
        if not any(E_map[x] == gz[z] and G_map[z] == gx[x] for x in supp_x):
            return False
    return True


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def verify_world(world: DiscreteWorld, rng=None, n_random_tables=1000):
    """Run every identity check on one world."""
    p_ex, p_gz = joint_measures(world)
    f = optimal_discriminator(p_ex, p_gz)
    f_ge = optimal_discriminator(p_gz, p_ex)
    d = f.defined
    checks = []
    sum_err = float(np.max(np.abs(f.values[d] + f_ge.values[d] - 1.0)))
    checks.append(CheckResult("f_EG + f_GE = 1", sum_err <= MEASURE_TOL, f"max error {sum_err:.3e}"))
    c = ceg(world)
    v_opt = value(world, f)
    checks.append(CheckResult("value(f*) = C(E,G)", abs(v_opt - c) < IDENTITY_TOL,
                              f"value {v_opt:.12f} vs C {c:.12f}"))
    l0 = l0_autoencoder_value(world)
    checks.append(CheckResult("l0 autoencoder = C(E,G)", abs(l0 - c) < IDENTITY_TOL,
                              f"l0 {l0:.12f} vs C {c:.12f}"))
    in_range = -LOG4 - MEASURE_TOL <= c <= MEASURE_TOL
    checks.append(CheckResult("C(E,G) in [-log 4, 0]", in_range, f"C {c:.12f}"))
    sym = abs(ceg_from_measures(p_gz, p_ex) - c)
    checks.append(CheckResult("JSD symmetry", sym < IDENTITY_TOL, f"diff {sym:.3e}"))
    if rng is not None and n_random_tables:
        worst = float(np.max(values_many(world, rng.random((n_random_tables,) + d.shape))))
        checks.append(CheckResult("f* maximizes value", v_opt >= worst,
                                  f"value(f*) {v_opt:.6f} >= best random {worst:.6f}"))
    inv = check_inversion(world)
    at_opt = abs(c + LOG4) <= MEASURE_TOL
    checks.append(CheckResult("optimum implies inversion", (not at_opt) or inv.ok,
                              f"at optimum: {at_opt}; fail mass x={inv.x_fail_mass} z={inv.z_fail_mass}"))
    return checks
