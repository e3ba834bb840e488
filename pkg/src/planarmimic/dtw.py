"""Dynamic time warping between observation sequences.

Two step patterns are provided:

* ``symmetric1``: steps (1,1), (1,0), (0,1), unit weight on the landed cell.
* ``mori_asymmetric``: the early-recognition asymmetric pattern. The query
  index advances by exactly one per step while the reference index advances
  by 0, 1 or 2, each step paying the landed cell's cost once. Every query
  frame is matched exactly once, reference frames may be skipped, and the
  accumulated cost is normalizable by the query length (the raw accumulated
  cost is what ``dtw_distance`` returns).

Open-end matching lets the path finish at any reference index, absorbing the
time shift between a rollout and a demonstration. A brute-force path
enumerator over the same step sets serves as the correctness oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STEP_PATTERNS = ("symmetric1", "mori_asymmetric")

_INF = float("inf")


@dataclass
class DtwConfig:
    step_pattern: str = "mori_asymmetric"
    open_end: bool = True

    def validate(self) -> list:
        if self.step_pattern not in STEP_PATTERNS:
            return [f"dtw.step_pattern must be one of {STEP_PATTERNS}, "
                    f"got {self.step_pattern!r}"]
        return []


def _local_cost(query: np.ndarray, reference: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    if r.ndim == 1:
        r = r[:, None]
    if q.shape[0] == 0 or r.shape[0] == 0:
        raise ValueError("sequences must be non-empty")
    if q.shape[1] != r.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: query {q.shape[1]} vs reference {r.shape[1]}")
    diff = q[:, None, :] - r[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def dtw_distance(query, reference, cfg: DtwConfig):
    """Minimum accumulated cost and the minimizing alignment.

    Returns (distance, alignment) where alignment is a list of
    (query_index, reference_index) pairs along the optimal path.
    """
    cost = _local_cost(query, reference)
    n, m = cost.shape
    if cfg.step_pattern == "symmetric1":
        dist, path = _dtw_symmetric1(cost, cfg.open_end)
    elif cfg.step_pattern == "mori_asymmetric":
        dist, path = _dtw_asymmetric(cost, cfg.open_end)
    else:
        raise ValueError(f"unknown step pattern {cfg.step_pattern!r}")
    if not np.isfinite(dist):
        raise ValueError(
            f"no admissible alignment for lengths ({n}, {m}) under "
            f"{cfg.step_pattern} (sequences too short for the step constraints)")
    return dist, path


def _dtw_symmetric1(cost: np.ndarray, open_end: bool):
    n, m = cost.shape
    acc = np.full((n, m), _INF)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            acc[i, j] = cost[i, j] + min(acc[i - 1, j - 1], acc[i - 1, j],
                                         acc[i, j - 1])
    end_j = int(np.argmin(acc[n - 1])) if open_end else m - 1
    dist = float(acc[n - 1, end_j])
    # backtrack
    path = [(n - 1, end_j)]
    i, j = n - 1, end_j
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], (i, j - 1)))
        _, (i, j) = min(candidates, key=lambda c: c[0])
        path.append((i, j))
    path.reverse()
    return dist, path


def _dtw_asymmetric(cost: np.ndarray, open_end: bool):
    n, m = cost.shape
    acc = np.full((n, m), _INF)
    came_from = np.full((n, m), -1, dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        for j in range(m):
            best = acc[i - 1, j]
            step = 0
            if j >= 1 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
                step = 1
            if j >= 2 and acc[i - 1, j - 2] < best:
                best = acc[i - 1, j - 2]
                step = 2
            if best < _INF:
                acc[i, j] = best + cost[i, j]
                came_from[i, j] = step
    end_j = int(np.argmin(acc[n - 1])) if open_end else m - 1
    dist = float(acc[n - 1, end_j])
    if not np.isfinite(dist):
        return dist, []
    path = [(n - 1, end_j)]
    i, j = n - 1, end_j
    while i > 0:
        j -= int(came_from[i, j])
        i -= 1
        path.append((i, j))
    path.reverse()
    return dist, path


def dtw_brute_force(query, reference, cfg: DtwConfig) -> float:
    """Exhaustive minimum over all admissible step-pattern paths. Exponential:
    both sequences must have length <= 8."""
    cost = _local_cost(query, reference)
    n, m = cost.shape
    if n > 8 or m > 8:
        raise ValueError("brute force limited to sequences of length <= 8")

    if cfg.step_pattern == "symmetric1":
        steps = ((1, 1), (1, 0), (0, 1))
    else:
        steps = ((1, 0), (1, 1), (1, 2))

    best = [_INF]

    def walk(i, j, total):
        if total >= best[0]:
            return
        if i == n - 1 and (cfg.open_end or j == m - 1):
            best[0] = total
            # symmetric paths may still extend along the reference axis when
            # the end is closed; handled by continuing below
        for di, dj in steps:
            ni, nj = i + di, j + dj
            if ni < n and nj < m:
                walk(ni, nj, total + cost[ni, nj])

    walk(0, 0, cost[0, 0])
    return best[0]


@dataclass
class DtwReport:
    mean: float
    std: float
    distances: np.ndarray  # (n_rollouts, n_references)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std,
                "distances": self.distances.tolist()}


def evaluate_policy_dtw(rollout_fn, dataset, n_rollouts: int, cfg: DtwConfig,
                        rng: np.random.Generator) -> DtwReport:
    """Score ``n_rollouts`` observation rollouts against every reference
    trajectory; every rollout x reference pair contributes one distance.

    ``rollout_fn(rng) -> (T, 6) array`` supplies the policy side, which keeps
    this metric independent of how rollouts are produced (simulated policy,
    scripted replay, or a stand-still baseline).
    """
    if n_rollouts <= 0:
        raise ValueError("n_rollouts must be positive")
    rollouts = [np.asarray(rollout_fn(rng), dtype=np.float64)
                for _ in range(n_rollouts)]
    distances = np.empty((n_rollouts, dataset.num_trajectories))
    for a, roll in enumerate(rollouts):
        for b, ref in enumerate(dataset.trajectories):
            distances[a, b], _ = dtw_distance(roll, ref, cfg)
    return DtwReport(mean=float(distances.mean()), std=float(distances.std()),
                     distances=distances)


def stand_still_rollout(obs_frame: np.ndarray, length: int) -> np.ndarray:
    """The motionless baseline: one observation frame repeated."""
    return np.tile(np.asarray(obs_frame, dtype=np.float64)[None, :], (length, 1))
