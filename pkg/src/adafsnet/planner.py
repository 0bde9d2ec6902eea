"""Prime kernel-size planning and receptive-field coverage certificates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RF_CAP = 48


class CoverageError(RuntimeError):
    """A coverage or Goldbach verification failed."""


def sieve_primes(n: int) -> list[int]:
    if n < 2:
        raise ValueError(f"sieve bound must be >= 2, got {n}")
    is_prime = _prime_table(n)
    return np.flatnonzero(is_prime).tolist()


def _prime_table(n: int) -> np.ndarray:
    is_prime = np.ones(n + 1, dtype=bool)
    is_prime[:2] = False
    for p in range(2, int(n**0.5) + 1):
        if is_prime[p]:
            is_prime[p * p :: p] = False
    return is_prime


def goldbach_pair(e: int, is_prime: np.ndarray | None = None) -> tuple[int, int]:
    """Lexicographically smallest (p, q), p <= q, of primes summing to ``e``."""
    if e < 4 or e % 2:
        raise ValueError(f"expected an even integer >= 4, got {e}")
    if is_prime is None or is_prime.size <= e:
        is_prime = _prime_table(e)
    for p in range(2, e // 2 + 1):
        if is_prime[p] and is_prime[e - p]:
            return p, e - p
    raise CoverageError(f"no Goldbach decomposition found for {e}")


def verify_goldbach(limit: int) -> list[int]:
    """Even numbers in [4, limit] lacking a two-prime decomposition (expected: none)."""
    is_prime = _prime_table(max(limit, 4))
    failures = []
    for e in range(4, limit + 1, 2):
        try:
            goldbach_pair(e, is_prime)
        except CoverageError:
            failures.append(e)
    return failures


def goldbach_desk_check(p_k: int) -> list[int]:
    """Even e in [4, 2*p_k] that cannot be written as a sum of two primes <= p_k."""
    primes = [p for p in sieve_primes(p_k)]
    sums = {p + q for p in primes for q in primes}
    return [e for e in range(4, 2 * p_k + 1, 2) if e not in sums]


def receptive_field(kernels) -> int:
    kernels = list(kernels)
    if not kernels:
        raise ValueError("receptive field of an empty stack is undefined")
    if any(k < 1 for k in kernels):
        raise ValueError(f"kernel sizes must be >= 1, got {kernels}")
    return 1 + sum(k - 1 for k in kernels)


def is_prime(n: int) -> bool:
    return n >= 2 and all(n % d for d in range(2, int(n**0.5) + 1))


def build_kernel_sets(p_k: int, literal_layer3: bool = False) -> tuple[list[int], list[int], list[int]]:
    """Layer kernel sets {1, 2, odd primes <= p_k} twice, then {1, 2} (or {2} if literal)."""
    if not is_prime(p_k):
        raise ValueError(f"p_k must be prime, got {p_k}")
    first = [1] + sieve_primes(p_k)
    return list(first), list(first), [2] if literal_layer3 else [1, 2]


def coverage_set(P1, P2, P3) -> list[int]:
    """All RFs k1 + k2 + k3 - 2 reachable by one kernel from each set.

    Computed as a sumset by convolving the sets' indicator vectors.
    """
    if not (P1 and P2 and P3):
        raise ValueError("kernel sets must be nonempty")

    def indicator(ks):
        v = np.zeros(max(ks) + 1, dtype=np.int64)
        v[list(ks)] = 1
        return v

    s = np.convolve(np.convolve(indicator(P1), indicator(P2)), indicator(P3))
    return (np.flatnonzero(s) - 2).tolist()


@dataclass
class KernelPlan:
    p_k: int
    layer_sets: tuple[list[int], list[int], list[int]]
    target_rf: int
    literal_layer3: bool = False
    paths: list[tuple[int, int, int]] = field(init=False)
    coverage: list[int] = field(init=False)

    def __post_init__(self):
        P1, P2, P3 = self.layer_sets
        self.paths = [(a, b, c) for a in P1 for b in P2 for c in P3]
        self.coverage = coverage_set(P1, P2, P3)

    @classmethod
    def from_prime(cls, p_k: int, target_rf: int, literal_layer3: bool = False) -> "KernelPlan":
        return cls(p_k, build_kernel_sets(p_k, literal_layer3), target_rf, literal_layer3)

    @property
    def required(self) -> range:
        # with layer 3 fixed at {2}, RF 1 is unreachable by construction and only
        # the even RFs are demanded when choosing p_k
        if self.literal_layer3:
            return range(2, self.target_rf + 1, 2)
        return range(1, self.target_rf + 1)

    def witness(self, rf: int) -> tuple[int, int, int] | None:
        """First path (in path order) whose receptive field equals ``rf``."""
        for path in self.paths:
            if sum(path) - 2 == rf:
                return path
        return None

    def to_dict(self) -> dict:
        return {
            "p_k": self.p_k,
            "layer_sets": [list(s) for s in self.layer_sets],
            "target_rf": self.target_rf,
            "literal_layer3": self.literal_layer3,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelPlan":
        return cls(d["p_k"], tuple(list(s) for s in d["layer_sets"]), d["target_rf"], d["literal_layer3"])


def verify_coverage(plan: KernelPlan) -> tuple[bool, list[int]]:
    """``(ok, missing)`` where missing lists the RFs in [1, target_rf] not covered."""
    cov = set(plan.coverage)
    missing = [n for n in range(1, plan.target_rf + 1) if n not in cov]
    return not missing, missing


def _meets_requirement(plan: KernelPlan) -> bool:
    cov = set(plan.coverage)
    return all(n in cov for n in plan.required)


def select_pk(series_length: int, rf_cap: int = DEFAULT_RF_CAP, literal_layer3: bool = False) -> KernelPlan:
    """Smallest prime whose kernel sets cover every RF up to min(series_length, rf_cap)."""
    if series_length < 2:
        raise ValueError(f"series length must be >= 2, got {series_length}")
    if rf_cap < 1:
        raise ValueError(f"rf_cap must be >= 1, got {rf_cap}")
    target = min(series_length, rf_cap)
    # the largest reachable RF is 2*p_k (+1 unless literal), so p_k <= target suffices
    for p in sieve_primes(max(target, 2) + 2):
        plan = KernelPlan.from_prime(p, target, literal_layer3)
        if _meets_requirement(plan):
            return plan
    raise CoverageError(f"no prime kernel plan covers RF range up to {target}")


@dataclass
class PathAttribution:
    """Layer-3 channel groups: group i owns channels [i*F, (i+1)*F) and path ``paths[i]``."""

    paths: list[tuple[int, int, int]]
    filters_per_path: int

    @property
    def channel_count(self) -> int:
        return len(self.paths) * self.filters_per_path

    def channels_of(self, i: int) -> slice:
        F = self.filters_per_path
        return slice(i * F, (i + 1) * F)

    def path_of_channel(self, c: int) -> tuple[int, int, int]:
        return self.paths[c // self.filters_per_path]

    def rf_of(self, i: int) -> int:
        return receptive_field(self.paths[i])


def coverage_certificate(plan: KernelPlan) -> list[str]:
    """Printable lines: one ``RF n: k1-k2-k3`` per target RF, then the verdict."""
    lines = [f"p_k = {plan.p_k}"]
    for i, s in enumerate(plan.layer_sets, 1):
        lines.append(f"P{i} = {s}")
    lines.append(f"paths = {len(plan.paths)}")
    for n in range(1, plan.target_rf + 1):
        w = plan.witness(n)
        lines.append(f"RF {n}: " + ("-".join(map(str, w)) if w else "MISSING"))
    ok, missing = verify_coverage(plan)
    if ok:
        lines.append(f"coverage OK [1..{plan.target_rf}]")
    else:
        lines.append(f"coverage FAIL [1..{plan.target_rf}] missing {missing}")
    return lines
