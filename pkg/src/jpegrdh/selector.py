"""Choosing which blocks carry the payload.

The main strategy turns the two objectives (total distortion, total size
expansion) into one constrained problem: first find the smallest achievable
expansion ``E*`` that still reaches the payload, then minimise distortion
subject to the payload and an expansion budget of ``(1 + alpha) * E*``.
The two Huang / Hou orderings are provided as baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost_model import CostTable, average_distortion, frequency_cost_table, frequency_counts
from .errors import BudgetUnsatisfiable, Infeasible, TooLarge
from .jpeg_codec import ZIGZAG, CoefficientImage
from .transform import component_size, idct_block, round_half_away

BRUTE_FORCE_MAX = 20
FULL_DP_CELLS = 4_000_000  # item x capacity cells above which the inner solver uses a core window
CORE_HALF_WIDTH = 300
SMALL_NEIGHBOURHOOD = 40  # useful signals up to which pair exchanges are searched


@dataclass
class SelectionProblem:
    R: np.ndarray
    D: np.ndarray
    E: np.ndarray
    C: int
    alpha: float = 1.0
    eligible: np.ndarray | None = None

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.int64).reshape(-1)
        self.D = np.asarray(self.D, dtype=np.float64).reshape(-1)
        self.E = np.clip(np.nan_to_num(np.asarray(self.E, dtype=np.float64).reshape(-1), nan=0.0), 0.0, None)
        k = self.R.size
        if self.eligible is None:
            self.eligible = np.ones(k, dtype=bool)
        self.eligible = np.asarray(self.eligible, dtype=bool).reshape(-1)
        if not (self.D.size == self.E.size == self.eligible.size == k):
            raise ValueError("R, D, E and eligible must have the same length")
        if (self.R < 0).any() or (self.D < 0).any():
            raise ValueError("capacities and distortions must be non-negative")
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and non-negative")
        self.C = int(self.C)
        if self.C < 0:
            raise ValueError("payload length must be non-negative")

    @property
    def k(self) -> int:
        return self.R.size

    @property
    def total_capacity(self) -> int:
        return int(self.R[self.eligible].sum())

    def check_feasible(self):
        if self.total_capacity < self.C:
            raise Infeasible(f"payload {self.C} exceeds eligible capacity {self.total_capacity}")


@dataclass
class DecisionVector:
    bits: np.ndarray
    objective_d: float
    objective_e: float
    capacity: int

    @classmethod
    def from_bits(cls, problem: SelectionProblem, bits) -> "DecisionVector":
        bits = np.asarray(bits, dtype=bool).reshape(-1)
        return cls(
            bits=bits,
            objective_d=float(problem.D[bits].sum()),
            objective_e=float(problem.E[bits].sum()),
            capacity=int(problem.R[bits].sum()),
        )

    @property
    def count(self) -> int:
        return int(self.bits.sum())


def _tol(x: float) -> float:
    return 1e-9 * (1.0 + abs(x))


# -- brute force oracle --------------------------------------------------------------

def subset_sums(values) -> np.ndarray:
    """Sums over all 2^k subsets; entry m sums the items whose bit is set in m."""
    values = np.asarray(values)
    out = np.zeros(1, dtype=values.dtype)
    for v in values:
        out = np.concatenate([out, out + v])
    return out


def _enumerate(problem: SelectionProblem):
    k = problem.k
    if k > BRUTE_FORCE_MAX:
        raise TooLarge(f"brute force is limited to {BRUTE_FORCE_MAX} signals, got {k}")
    cap = subset_sums(problem.R)
    d = subset_sums(problem.D)
    e = subset_sums(problem.E)
    # signal 0 is the most significant position when comparing V lexicographically
    lex = subset_sums(1 << np.arange(k - 1, -1, -1, dtype=np.int64))
    banned = subset_sums((~problem.eligible).astype(np.int64))
    return (banned == 0) & (cap >= problem.C), d, e, lex


def _bits_of(m: int, k: int) -> np.ndarray:
    return ((m >> np.arange(k)) & 1).astype(bool)


def brute_force_min_expansion(problem: SelectionProblem) -> float:
    ok, _, e, _ = _enumerate(problem)
    if not ok.any():
        raise Infeasible("no subset reaches the payload")
    return float(e[ok].min())


def brute_force_select(problem: SelectionProblem) -> DecisionVector:
    """Exhaustive search; ties go to lower expansion, then the lexicographically smallest V."""
    ok, d, e, lex = _enumerate(problem)
    if not ok.any():
        raise Infeasible("no subset reaches the payload")
    e_star = e[ok].min()
    budget = (1 + problem.alpha) * e_star
    ok &= e <= budget + _tol(budget)
    idx = np.flatnonzero(ok)
    best = idx[np.lexsort((lex[idx], e[idx], d[idx]))[0]]
    return DecisionVector.from_bits(problem, _bits_of(int(best), problem.k))


# -- capacity dynamic programme ---------------------------------------------------------

def _cover_dp(r: np.ndarray, w: np.ndarray, C: int, items: np.ndarray, solve: bool = True):
    """min sum(w) over subsets of ``items`` with sum(r) >= C (capacity capped at C).

    Returns (value, selected item indices or None).
    """
    dp = np.full(C + 1, np.inf)
    dp[0] = 0.0
    trace = [] if solve else None
    for i in items:
        ri = int(r[i])
        cand = np.empty_like(dp)
        cand[:ri] = w[i]
        cand[ri:] = dp[:C + 1 - ri] + w[i] if ri <= C else w[i]
        better = cand < dp
        np.minimum(dp, cand, out=dp)
        if solve:
            trace.append(np.packbits(better))
    value = float(dp[C])
    if not solve or not math.isfinite(value):
        return value, None
    chosen = []
    c = C
    for pos in range(len(items) - 1, -1, -1):
        if c <= 0:
            break
        if (trace[pos][c >> 3] >> (7 - (c & 7))) & 1:
            i = items[pos]
            chosen.append(i)
            c = max(c - int(r[i]), 0)
    return value, np.array(chosen[::-1], dtype=np.int64)


def _useful_items(problem: SelectionProblem) -> np.ndarray:
    return np.flatnonzero(problem.eligible & (problem.R > 0))


def min_expansion(problem: SelectionProblem) -> float:
    """Exact minimum total expansion E* that still reaches the payload."""
    return _min_expansion(problem, solve=False)[0]


def _min_expansion(problem: SelectionProblem, solve: bool):
    problem.check_feasible()
    if problem.C == 0:
        return 0.0, np.zeros(problem.k, dtype=bool)
    items = _useful_items(problem)
    value, chosen = _cover_dp(problem.R, problem.E, problem.C, items, solve=solve)
    if not math.isfinite(value):
        raise Infeasible("no subset reaches the payload")
    bits = None
    if chosen is not None:
        bits = np.zeros(problem.k, dtype=bool)
        bits[chosen] = True
    return value, bits


def _cover(problem: SelectionProblem, w: np.ndarray) -> np.ndarray:
    """Near-exact min-weight cover: full DP when small, otherwise DP on a core window.

    The core window is centred on the break item of the greedy weight/capacity
    ordering; items before it are fixed in, items after it are fixed out.
    """
    items = _useful_items(problem)
    C = problem.C
    bits = np.zeros(problem.k, dtype=bool)
    if len(items) * (C + 1) <= FULL_DP_CELLS:
        _, chosen = _cover_dp(problem.R, w, C, items)
        bits[chosen] = True
        return bits
    r = problem.R[items]
    ratio = w[items] / r
    order = items[np.lexsort((items, problem.E[items], ratio))]
    cum = np.cumsum(problem.R[order])
    brk = int(np.searchsorted(cum, C))
    lo = max(0, brk - CORE_HALF_WIDTH)
    hi = min(len(order), brk + CORE_HALF_WIDTH + 1)
    fixed = order[:lo]
    bits[fixed] = True
    rest = C - int(problem.R[fixed].sum())
    if rest > 0:
        _, chosen = _cover_dp(problem.R, w, rest, order[lo:hi])
        bits[chosen] = True
    return bits


# -- main selector ----------------------------------------------------------------------

def _feasible(problem: SelectionProblem, bits: np.ndarray, budget: float) -> bool:
    if (bits & ~problem.eligible).any():
        return False
    cap = int(problem.R[bits].sum())
    return cap >= problem.C and problem.E[bits].sum() <= budget + _tol(budget)


def _key(problem: SelectionProblem, bits: np.ndarray):
    return (float(problem.D[bits].sum()), float(problem.E[bits].sum()), tuple(np.flatnonzero(bits)))


def _improve(problem: SelectionProblem, bits: np.ndarray, budget: float, passes: int = 4) -> np.ndarray:
    """Local search: drop redundant signals, then single in/out swaps that lower distortion."""
    if _useful_items(problem).size <= SMALL_NEIGHBOURHOOD:
        return _improve_small(problem, bits, budget)
    R, D, E = problem.R, problem.D, problem.E
    bits = bits.copy()
    for _ in range(passes):
        changed = False
        for i in np.flatnonzero(bits)[np.argsort(-D[bits], kind="stable")]:
            if R[bits].sum() - R[i] >= problem.C:
                bits[i] = False
                changed = True
        cap = int(R[bits].sum())
        e_tot = float(E[bits].sum())
        for i in np.flatnonzero(bits)[np.argsort(-D[bits], kind="stable")]:
            pool = problem.eligible & ~bits
            pool &= R >= R[i] - (cap - problem.C)
            pool &= E - E[i] <= budget - e_tot
            pool &= D < D[i] - _tol(D[i])
            cand = np.flatnonzero(pool)
            if cand.size == 0:
                continue
            j = cand[np.lexsort((cand, E[cand], D[cand]))[0]]
            bits[i] = False
            bits[j] = True
            cap += int(R[j] - R[i])
            e_tot += float(E[j] - E[i])
            changed = True
        if not changed:
            break
    return bits


def _groups(idx: np.ndarray):
    """All subsets of ``idx`` with at most two members, as an index matrix padded with -1."""
    singles = [(int(i), -1) for i in idx]
    pairs = [(int(a), int(b)) for n, a in enumerate(idx) for b in idx[n + 1:]]
    return np.array([(-1, -1)] + singles + pairs, dtype=np.int64).reshape(-1, 2)


def _group_sums(groups: np.ndarray, values: np.ndarray) -> np.ndarray:
    padded = np.append(values, 0)  # index -1 picks the trailing zero
    return padded[groups].sum(axis=1)


def _improve_small(problem: SelectionProblem, bits: np.ndarray, budget: float) -> np.ndarray:
    """Best-improvement search exchanging up to two selected for up to two unselected signals."""
    R, D, E = problem.R, problem.D, problem.E
    bits = bits.copy()
    useful = _useful_items(problem)
    for _ in range(10 * max(len(useful), 1)):
        out_g = _groups(np.flatnonzero(bits))
        in_g = _groups(useful[~bits[useful]])
        cap = int(R[bits].sum())
        e_tot = float(E[bits].sum())
        d_tot = float(D[bits].sum())
        new_cap = cap - _group_sums(out_g, R)[:, None] + _group_sums(in_g, R)[None, :]
        new_e = e_tot - _group_sums(out_g, E)[:, None] + _group_sums(in_g, E)[None, :]
        delta = _group_sums(in_g, D)[None, :] - _group_sums(out_g, D)[:, None]
        ok = (new_cap >= problem.C) & (new_e <= budget + _tol(budget)) & (delta < -_tol(d_tot))
        if not ok.any():
            break
        flat = np.flatnonzero(ok)
        best = flat[np.lexsort((flat, new_e.ravel()[flat], delta.ravel()[flat]))[0]]
        o, n = divmod(int(best), in_g.shape[0])
        bits[out_g[o][out_g[o] >= 0]] = False
        bits[in_g[n][in_g[n] >= 0]] = True
    return bits


def _repair(problem: SelectionProblem, bits: np.ndarray, budget: float, steps: int = 200):
    """Pull an over-budget cover back under the expansion budget, cheapest distortion per bit first.

    Returns None when no sequence of drops and single swaps gets there.
    """
    R, D, E = problem.R, problem.D, problem.E
    bits = bits.copy()
    useful = _useful_items(problem)
    for _ in range(steps):
        e_tot = float(E[bits].sum())
        excess = e_tot - budget
        if excess <= _tol(budget):
            return bits
        sel = np.flatnonzero(bits)
        free = useful[~bits[useful]]
        slack = int(R[bits].sum()) - problem.C
        # column 0 of the swap-in choices means "drop only"
        r_in = np.append(0, R[free])
        dr = r_in[None, :] - R[sel][:, None]
        de = np.append(0.0, E[free])[None, :] - E[sel][:, None]
        dd = np.append(0.0, D[free])[None, :] - D[sel][:, None]
        ok = (dr >= -slack) & (de < 0)
        if not ok.any():
            return None
        # distortion paid per unit of excess removed; overshooting the excess earns nothing
        score = np.full(dd.shape, np.inf)
        np.divide(dd, np.minimum(-de, excess), out=score, where=ok)
        flat = int(np.argmin(score))
        i, j = divmod(flat, r_in.size)
        bits[sel[i]] = False
        if j:
            bits[free[j - 1]] = True
    return bits if _feasible(problem, bits, budget) else None


def select_signals(problem: SelectionProblem, warm_starts=(), exact_up_to: int = BRUTE_FORCE_MAX) -> DecisionVector:
    """Minimise total distortion subject to the payload and the expansion budget.

    Instances with at most ``exact_up_to`` signals are solved by enumeration.
    Larger ones use Lagrangian bisection over ``d + lambda * e`` with a capacity DP,
    then repair and local search. ``warm_starts`` are extra decision vectors (e.g. a
    baseline ordering) kept as candidates when they satisfy both constraints.
    """
    problem.check_feasible()
    if problem.C == 0:
        return DecisionVector.from_bits(problem, np.zeros(problem.k, dtype=bool))
    if problem.k <= min(exact_up_to, BRUTE_FORCE_MAX):
        return brute_force_select(problem)
    e_star, star_bits = _min_expansion(problem, solve=True)
    budget = (1 + problem.alpha) * e_star
    feasible = [star_bits]
    over = []

    def solve(lam):
        bits = _cover(problem, problem.D + lam * problem.E)
        if _feasible(problem, bits, budget):
            feasible.append(bits)
            return True
        over.append(bits)
        return False

    for ws in warm_starts:
        ws_bits = np.asarray(ws.bits if isinstance(ws, DecisionVector) else ws, dtype=bool)
        if ws_bits.shape == (problem.k,) and _feasible(problem, ws_bits, budget):
            feasible.append(ws_bits.copy())

    if not solve(0.0):
        d_scale = max(float(problem.D[problem.eligible].sum()), 1e-12)
        e_scale = max(float(problem.E[problem.eligible].sum()), 1e-12)
        lo, hi = 0.0, 1e-3 * d_scale / e_scale
        for _ in range(80):
            if solve(hi):
                break
            lo, hi = hi, hi * 2
        else:
            hi = None
        if hi is not None:
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                if solve(mid):
                    hi = mid
                else:
                    lo = mid
    # the last few over-budget covers sit closest to the budget
    for bits in over[-3:]:
        fixed = _repair(problem, bits, budget)
        if fixed is not None:
            feasible.append(fixed)
    ranked = sorted(feasible, key=lambda b: _key(problem, b))
    seen = set()
    best = None
    for bits in ranked[:3]:
        if bits.tobytes() in seen:
            continue
        seen.add(bits.tobytes())
        bits = _improve(problem, bits, budget)
        if best is None or _key(problem, bits) < _key(problem, best):
            best = bits
    if not _feasible(problem, best, budget):
        raise BudgetUnsatisfiable("no selection satisfies the expansion budget")
    return DecisionVector.from_bits(problem, best)


# -- baselines ------------------------------------------------------------------------------

def _prefix(order: np.ndarray, R: np.ndarray, C: int, k: int) -> np.ndarray:
    bits = np.zeros(k, dtype=bool)
    if C <= 0:
        return bits
    cum = np.cumsum(R[order])
    if cum.size == 0 or cum[-1] < C:
        raise Infeasible(f"payload {C} exceeds eligible capacity {int(cum[-1]) if cum.size else 0}")
    n = int(np.searchsorted(cum, C)) + 1
    bits[order[:n]] = True
    return bits


def huang_order(costs: CostTable, C: int, eligible=None) -> DecisionVector:
    """Blocks with more zero AC coefficients first (ties by index) until the payload fits."""
    problem = _problem_from_costs(costs, C, eligible)
    items = _useful_items(problem)
    order = items[np.lexsort((items, -costs.zeros[items]))]
    return DecisionVector.from_bits(problem, _prefix(order, problem.R, C, problem.k))


def _problem_from_costs(costs: CostTable, C: int, eligible=None, alpha: float = 1.0) -> SelectionProblem:
    ok = costs.ok if eligible is None else (np.asarray(eligible, dtype=bool) & costs.ok)
    return SelectionProblem(costs.r, costs.d, costs.e, C, alpha, ok)


def problem_from_costs(costs: CostTable, C: int, alpha: float = 1.0, eligible=None) -> SelectionProblem:
    return _problem_from_costs(costs, C, eligible, alpha)


def _block_pixels(blocks: np.ndarray, quant: np.ndarray) -> np.ndarray:
    spatial = idct_block((blocks.astype(np.float64) * quant).reshape(-1, 8, 8)).reshape(-1, 64)
    return np.clip(round_half_away(spatial + 128.0), 0, 255)


def _hs_blocks(blocks: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Histogram-shift a stack of blocks with a bit stream consumed in block, zigzag order."""
    zz = blocks[:, ZIGZAG[1:]].astype(np.int64)
    mags = np.abs(zz)
    emb = mags == 1
    n_emb = int(emb.sum())
    stream = np.zeros(n_emb, dtype=np.int64)
    stream[:min(n_emb, bits.size)] = bits[:n_emb]
    step = (mags > 1).astype(np.int64)
    step[emb] = stream
    out = blocks.astype(np.int64).copy()
    out[:, ZIGZAG[1:]] = zz + np.sign(zz) * step
    return out


def hou_ranking(image: CoefficientImage, descending: bool = True) -> np.ndarray:
    """AC frequencies (natural index) with at least one +-1 entry, ordered by average distortion.

    Equal averages keep zigzag order.
    """
    ones, out = frequency_counts(image)
    cost = frequency_cost_table(image.luma.quant)
    freqs = []
    for f in ZIGZAG[1:]:
        u, v = divmod(int(f), 8)
        if ones[u, v]:
            freqs.append((average_distortion(int(ones[u, v]), int(out[u, v]), cost[u, v]), int(f)))
    freqs.sort(key=lambda t: -t[0] if descending else t[0])
    return np.array([f for _, f in freqs], dtype=np.int64)


def hou_candidates(image: CoefficientImage, costs: CostTable, C: int, eligible=None, descending: bool = True):
    """Yield ``(K, bits)``: blocks ordered by distortion over the top-K frequencies, cut at C."""
    problem = _problem_from_costs(costs, C, eligible)
    problem.check_feasible()
    ranked = hou_ranking(image, descending)
    blocks = image.luma.blocks.astype(np.int64)
    mags = np.abs(blocks[:, ranked])
    q2 = image.luma.quant.astype(np.float64)[ranked] ** 2
    partial = np.cumsum((0.5 * (mags == 1) + (mags > 1)) * q2, axis=1)
    items = _useful_items(problem)
    for K in range(1, len(ranked) + 1):
        order = items[np.lexsort((items, partial[items, K - 1]))]
        yield K, _prefix(order, problem.R, C, problem.k)


def hou_select(image: CoefficientImage, costs: CostTable, C: int, eligible=None,
               message=None, descending: bool = True, seed: int = 0):
    """Hou-style selection: keep the top-K candidate whose simulated embedding has the best PSNR.

    ``message`` defaults to seeded random bits. Returns ``(DecisionVector, K)``;
    PSNR ties go to the smaller K.
    """
    problem = _problem_from_costs(costs, C, eligible)
    problem.check_feasible()
    if C == 0:
        return DecisionVector.from_bits(problem, np.zeros(problem.k, dtype=bool)), 0
    comp = image.luma
    blocks = comp.blocks.astype(np.int64)
    if message is None:
        message = np.random.default_rng(seed).integers(0, 2, size=C)
    message = np.asarray(message, dtype=np.int64)
    cover_pix = _block_pixels(blocks, comp.quant)
    valid = _valid_pixels(image)
    best = None
    seen = {}
    for K, bits in hou_candidates(image, costs, C, eligible, descending):
        key = bits.tobytes()
        if key not in seen:
            chosen = np.flatnonzero(bits)
            stego = _hs_blocks(blocks[chosen], message)
            diff = (_block_pixels(stego, comp.quant) - cover_pix[chosen]) * valid[chosen]
            seen[key] = float((diff * diff).sum())
        if best is None or seen[key] < best[0]:
            best = (seen[key], K, bits)
    return DecisionVector.from_bits(problem, best[2]), best[1]


def _valid_pixels(image: CoefficientImage) -> np.ndarray:
    comp = image.luma
    width, height = component_size(image, 0)
    ys = np.arange(comp.rows * 8) < height
    xs = np.arange(comp.cols * 8) < width
    grid = (ys[:, None] & xs[None, :]).astype(np.float64)
    return grid.reshape(comp.rows, 8, comp.cols, 8).transpose(0, 2, 1, 3).reshape(-1, 64)


# -- text exchange format ----------------------------------------------------------------------

def write_problem(problem: SelectionProblem, fh) -> None:
    fh.write(f"{problem.k} {problem.C} {problem.alpha!r}\n")
    for r, d, e, ok in zip(problem.R, problem.D, problem.E, problem.eligible):
        fh.write(f"{int(r)} {float(d)!r} {float(e)!r} {int(bool(ok))}\n")


def read_problem(fh) -> SelectionProblem:
    lines = [ln.split() for ln in fh.read().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 3:
        raise ValueError("first line must be 'k C alpha'")
    k, C, alpha = int(lines[0][0]), int(lines[0][1]), float(lines[0][2])
    rows = lines[1:]
    if len(rows) != k or any(len(row) != 4 for row in rows):
        raise ValueError(f"expected {k} rows of 'r d e eligible'")
    arr = np.array(rows, dtype=object)
    return SelectionProblem(
        R=arr[:, 0].astype(np.int64), D=arr[:, 1].astype(np.float64),
        E=arr[:, 2].astype(np.float64), C=C, alpha=alpha,
        eligible=arr[:, 3].astype(np.int64).astype(bool),
    )
