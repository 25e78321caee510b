"""Ground-truth graph synthesis with controlled heterogeneity.

Every family starts from a common structure, perturbs it per entity, and
records both so estimates can be scored later. Conventions: entry (i, j)
is the connection from node j into node i; entity matrices live in
``TruthSet.entities`` and the shared structure in ``TruthSet.common``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "TruthSet", "gen_linear_var", "gen_nonlinear_var", "gen_lv",
    "gen_lorenz96", "gen_springs", "nonlinear_parent_sets", "FIX_RULES",
]


@dataclass
class TruthSet:
    common: np.ndarray              # [p, p]
    entities: list                  # M arrays [p, p]
    mode: str                       # continuous | binary
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.entities)

    @property
    def p(self) -> int:
        return self.common.shape[0]


def _spectral_radius(a: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def _rescale_to_radius(a: np.ndarray, rho: float) -> np.ndarray:
    radius = _spectral_radius(a)
    if radius < 1e-12:
        raise ConfigurationError("matrix has (near) zero spectral radius")
    out = a * (rho / radius)
    out[np.abs(out) < 1e-12] = 0.0
    return out


def gen_linear_var(p: int, M: int, density: float = 0.1,
                   relocate_frac: float = 0.1, rho: float = 0.5,
                   rng: np.random.Generator | None = None,
                   max_tries: int = 200) -> TruthSet:
    """Sparse random transition matrices sharing a backbone.

    The initial common matrix has a Bernoulli(density) skeleton with
    magnitudes in (1, 2) of random sign, scaled to spectral radius ``rho``.
    A fixed fraction of support entries is then relocated to random
    off-support positions, independently per entity; those entries are zeroed
    in the final common matrix. Every matrix is re-scaled to radius ``rho``
    so each simulated system is certifiably stable.
    """
    if not (0 < density < 1) or not (0 <= relocate_frac < 1) or not (0 < rho < 1):
        raise ConfigurationError(
            "gen_linear_var requires density, relocate_frac in (0,1) and rho in (0,1)")
    rng = rng or np.random.default_rng(0)
    for _ in range(max_tries):
        support = rng.random((p, p)) < density
        n_support = int(support.sum())
        if n_support < 2:
            continue
        magnitudes = rng.uniform(1.0, 2.0, size=n_support)
        signs = rng.choice([-1.0, 1.0], size=n_support)
        base = np.zeros((p, p))
        base[support] = magnitudes * signs
        if _spectral_radius(base) < 1e-9:
            continue
        base = _rescale_to_radius(base, rho)

        n_move = int(np.floor(relocate_frac * n_support + 0.5))
        sup_idx = np.argwhere(support)
        move_rows = rng.choice(n_support, size=n_move, replace=False) \
            if n_move else np.empty(0, dtype=int)
        moved = sup_idx[move_rows]                     # fixed across entities
        free = np.argwhere(~support)
        if n_move > len(free):
            continue

        entities = []
        ok = True
        for _ in range(M):
            a = base.copy()
            dest = free[rng.choice(len(free), size=n_move, replace=False)] \
                if n_move else np.empty((0, 2), dtype=int)
            for (src, dst) in zip(moved, dest):
                a[dst[0], dst[1]] = a[src[0], src[1]]
                a[src[0], src[1]] = 0.0
            if _spectral_radius(a) < 1e-9:
                ok = False
                break
            entities.append(_rescale_to_radius(a, rho))
        if not ok:
            continue

        common = base.copy()
        for (i, j) in moved:
            common[i, j] = 0.0
        if _spectral_radius(common) < 1e-9:
            continue
        common = _rescale_to_radius(common, rho)
        meta = {"relocated": [tuple(map(int, ij)) for ij in moved],
                "rho": rho, "density": density}
        return TruthSet(common, entities, "continuous", meta)
    raise ConfigurationError("gen_linear_var: no usable draw after retries")


FIX_RULES = ("all", "every_other_row", "every_third_row",
             "diag_and_corners", "first_last_rows")


def _fixed_rows(p: int, rule: str) -> set:
    """Interior rows whose off-diagonal band entries stay put (1-indexed rule,
    applied to 0-indexed rows). The first and last rows are always kept."""
    if rule == "all":
        return set(range(p))
    if rule == "every_other_row":
        return {i for i in range(p) if (i + 1) % 2 == 0}
    if rule == "every_third_row":
        return {i for i in range(p) if (i + 1) % 3 == 0}
    if rule in ("diag_and_corners", "first_last_rows"):
        return set()
    raise ConfigurationError(f"unknown fix_rule {rule!r}; choose from {FIX_RULES}")


def gen_nonlinear_var(p: int, M: int, fix_rule: str = "every_third_row",
                      rng: np.random.Generator | None = None) -> TruthSet:
    """Banded skeleton with per-entity relocation of off-diagonal parents.

    The initial common graph is tridiagonal. Interior rows not protected by
    ``fix_rule`` relocate their two off-diagonal entries within the row,
    keeping one parent below and one above the diagonal; boundary rows keep
    their two entries. The final common graph is the entrywise intersection
    of the entity supports.
    """
    if p < 4:
        raise ConfigurationError("gen_nonlinear_var needs p >= 4")
    rng = rng or np.random.default_rng(0)
    band = np.zeros((p, p))
    for i in range(p):
        band[i, i] = 1.0
        if i > 0:
            band[i, i - 1] = 1.0
        if i < p - 1:
            band[i, i + 1] = 1.0
    band[0, :] = 0.0
    band[0, 0] = band[0, 1] = 1.0
    band[p - 1, :] = 0.0
    band[p - 1, p - 1] = band[p - 1, p - 2] = 1.0

    keep = _fixed_rows(p, fix_rule)
    entities = []
    for _ in range(M):
        z = band.copy()
        for i in range(1, p - 1):
            if i in keep:
                continue
            z[i, :] = 0.0
            z[i, i] = 1.0
            lower_choices = [j for j in range(0, i) if j != i - 1] or [i - 1]
            upper_choices = [j for j in range(i + 1, p) if j != i + 1] or [i + 1]
            z[i, int(rng.choice(lower_choices))] = 1.0
            z[i, int(rng.choice(upper_choices))] = 1.0
        entities.append(z)
    common = entities[0].copy()
    for z in entities[1:]:
        common = common * z
    meta = {"fix_rule": fix_rule, "band": band}
    return TruthSet(common, entities, "binary", meta)


def nonlinear_parent_sets(z: np.ndarray):
    """Per-row parent triples (k1 < i < k3) implied by a nonlinear-VAR graph."""
    p = z.shape[0]
    parents = []
    for i in range(p):
        sup = set(np.flatnonzero(z[i]))
        if i in (0, p - 1):
            expect = {0, 1} if i == 0 else {p - 1, p - 2}
            if sup != expect:
                raise ConfigurationError(
                    f"boundary row {i} must have parents {sorted(expect)}, got {sorted(sup)}")
            parents.append(tuple(sorted(sup)))
            continue
        if i not in sup or len(sup) != 3:
            raise ConfigurationError(
                f"interior row {i} must have 3 parents including itself")
        below = sorted(j for j in sup if j < i)
        above = sorted(j for j in sup if j > i)
        if len(below) != 1 or len(above) != 1:
            raise ConfigurationError(
                f"interior row {i} needs one parent below and one above the diagonal")
        parents.append((below[0], i, above[0]))
    return parents


def gen_lv(p: int, M: int, extra_edges: int = 2,
           rng: np.random.Generator | None = None) -> TruthSet:
    """Block-decoupled predator-prey graphs with symmetric cross couplings.

    Nodes 0..p/2-1 are preys and p/2..p-1 predators; each block couples two
    preys with two predators. Entities add ``extra_edges`` random cross-block
    prey-predator pairs, mirrored so the correspondence stays symmetric.
    """
    if p % 4 != 0:
        raise ConfigurationError("gen_lv needs p divisible by 4")
    rng = rng or np.random.default_rng(0)
    half = p // 2
    blocks = p // 4
    common = np.zeros((p, p))
    np.fill_diagonal(common, 1.0)
    for b in range(blocks):
        preys = [2 * b, 2 * b + 1]
        preds = [half + 2 * b, half + 2 * b + 1]
        for i in preys:
            for j in preds:
                common[i, j] = 1.0
                common[j, i] = 1.0

    candidates = [(i, j) for i in range(half) for j in range(half)
                  if i // 2 != j // 2]  # cross-block (prey, predator) pairs
    entities = []
    for _ in range(M):
        z = common.copy()
        if extra_edges:
            if extra_edges > len(candidates):
                raise ConfigurationError("extra_edges exceeds available pairs")
            pick = rng.choice(len(candidates), size=extra_edges, replace=False)
            for idx in pick:
                i, j = candidates[idx]
                z[i, half + j] = 1.0
                z[half + j, i] = 1.0
        entities.append(z)
    meta = {"blocks": blocks, "extra_edges": extra_edges}
    return TruthSet(common, entities, "binary", meta)


def gen_lorenz96(p: int, forcing) -> TruthSet:
    """Identical cyclic banded skeleton per entity; heterogeneity lives in the
    forcing constant recorded per entity."""
    if p < 4:
        raise ConfigurationError("gen_lorenz96 needs p >= 4")
    common = np.zeros((p, p))
    for i in range(p):
        for j in (i - 2, i - 1, i, i + 1):
            common[i, j % p] = 1.0
    forcing = list(forcing)
    entities = [common.copy() for _ in forcing]
    return TruthSet(common, entities, "binary", {"forcing": forcing})


def gen_springs(p: int, M: int,
                rng: np.random.Generator | None = None) -> TruthSet:
    """Common edge probabilities from Beta(1, 1); entities draw symmetric
    Bernoulli graphs from them. No self-springs."""
    if p < 2:
        raise ConfigurationError("gen_springs needs p >= 2")
    rng = rng or np.random.default_rng(0)
    common = np.zeros((p, p))
    iu = np.triu_indices(p, k=1)
    common[iu] = rng.beta(1.0, 1.0, size=len(iu[0]))
    common = common + common.T
    entities = []
    for _ in range(M):
        z = np.zeros((p, p))
        z[iu] = (rng.random(len(iu[0])) < common[iu]).astype(float)
        z = z + z.T
        entities.append(z)
    return TruthSet(common, entities, "binary", {})
