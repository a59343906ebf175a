"""Self-contained No-U-Turn Sampler with windowed warmup adaptation.

Implements multinomial trajectory sampling over a doubling binary tree
(rather than the original slice variant), a diagonal mass matrix, dual
averaging of the step size, and Stan-style warmup windows: an initial
step-size phase, expanding covariance-estimation windows with the mass
matrix refreshed at each window boundary, and a terminal step-size
phase.  Chains are deterministic functions of their seed; the RNG is
counter-based (Philox) so block/chain streams never overlap.

The target is supplied as a callable ``logdensity_with_grad(u) ->
(logp, grad)``; ``-inf`` values are treated as rejected (divergent)
proposals.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AllDivergentError, InitializationFailedError

__all__ = ["NutsConfig", "ChainOutput", "sample", "sample_chain", "combine_draws"]

_DIVERGENCE_THRESHOLD = 1000.0  # energy error triggering a divergence


@dataclass(frozen=True)
class NutsConfig:
    """Sampler settings.

    ``init`` is ``"zero"`` (start at the origin of the unconstrained
    space) or ``"uniform"`` (independent draws over ``init_bounds``,
    retried until the density is finite).
    """

    chains: int = 2
    warmup: int = 300
    draws: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init: str = "uniform"
    init_bounds: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.draws < 1:
            raise ValueError("chains, warmup and draws must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be positive")
        if self.init not in ("zero", "uniform"):
            raise ValueError("init must be 'zero' or 'uniform'")


@dataclass
class ChainOutput:
    """Post-warmup output of a single chain (unconstrained scale)."""

    draws: np.ndarray                 # (draws, dim)
    accept_stats: np.ndarray          # mean accept prob per kept draw
    divergence_count: int             # total, warmup included
    post_warmup_divergences: int
    tree_depth_hist: np.ndarray       # counts of terminal depths, post-warmup
    wall_time_seconds: float
    step_size: float
    inv_mass: np.ndarray


class _Leaf:
    """End state of a trajectory segment."""

    __slots__ = ("q", "p", "grad", "logp", "p_sharp")

    def __init__(self, q, p, grad, logp, p_sharp):
        self.q = q
        self.p = p
        self.grad = grad
        self.logp = logp
        self.p_sharp = p_sharp


def _criterion(p_sharp_left, p_sharp_right, rho) -> bool:
    return float(rho @ p_sharp_left) > 0.0 and float(rho @ p_sharp_right) > 0.0


class _Tree:
    """A trajectory segment tracked in spatial (left-to-right) order."""

    __slots__ = (
        "left", "right", "rho", "logw", "prop",
        "sum_alpha", "n_alpha", "divergent", "turning",
    )

    def __init__(self, leaf, logw, alpha, divergent):
        self.left = leaf
        self.right = leaf
        self.rho = leaf.p.copy()
        self.logw = logw
        self.prop = leaf
        self.sum_alpha = alpha
        self.n_alpha = 1
        self.divergent = divergent
        self.turning = False


def _merge(left: _Tree, right: _Tree, rng, new_side: str | None) -> _Tree:
    """Join two spatially adjacent segments, left of right.

    ``new_side`` names the freshly built segment for the progressive
    top-level sampling rule, which favours the new segment with
    probability ``min(1, w_new / w_old)``; ``None`` selects the unbiased
    multinomial rule used inside subtree construction.
    """
    out = left
    logw_tot = np.logaddexp(left.logw, right.logw)
    if new_side is None:
        take_right = rng.random() < math.exp(right.logw - logw_tot)
    else:
        new, old = (right, left) if new_side == "right" else (left, right)
        take_new = rng.random() < math.exp(min(0.0, new.logw - old.logw))
        take_right = take_new if new_side == "right" else not take_new
    if take_right:
        out.prop = right.prop
    out.logw = logw_tot
    out.sum_alpha += right.sum_alpha
    out.n_alpha += right.n_alpha
    out.divergent |= right.divergent
    rho = left.rho + right.rho
    turning = not _criterion(left.left.p_sharp, right.right.p_sharp, rho)
    if not turning:
        turning = not _criterion(
            left.left.p_sharp, right.left.p_sharp, left.rho + right.left.p
        )
    if not turning:
        turning = not _criterion(
            left.right.p_sharp, right.right.p_sharp, right.rho + left.right.p
        )
    out.turning = left.turning or right.turning or turning
    out.rho = rho
    out.left = left.left
    out.right = right.right
    return out


class _NutsChain:
    def __init__(self, logdensity_with_grad, dim, config: NutsConfig, rng):
        self.f = logdensity_with_grad
        self.dim = dim
        self.cfg = config
        self.rng = rng
        self.inv_mass = np.ones(dim)
        self.n_evals = 0

    # -- hamiltonian pieces ---------------------------------------------------

    def _eval(self, q):
        self.n_evals += 1
        return self.f(q)

    def _kinetic(self, p):
        return 0.5 * float(p @ (self.inv_mass * p))

    def _leapfrog(self, leaf: _Leaf, eps: float) -> _Leaf:
        p = leaf.p + 0.5 * eps * leaf.grad
        q = leaf.q + eps * (self.inv_mass * p)
        logp, grad = self._eval(q)
        p = p + 0.5 * eps * grad
        return _Leaf(q, p, grad, logp, self.inv_mass * p)

    def _draw_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)

    # -- nuts tree ------------------------------------------------------------

    def _base_tree(self, start: _Leaf, direction: int, eps: float, joint0: float) -> _Tree:
        leaf = self._leapfrog(start, direction * eps)
        joint = leaf.logp - self._kinetic(leaf.p)
        delta = joint - joint0 if np.isfinite(joint) else -np.inf
        divergent = delta < -_DIVERGENCE_THRESHOLD
        alpha = math.exp(min(0.0, delta)) if np.isfinite(delta) else 0.0
        return _Tree(leaf, logw=delta, alpha=alpha, divergent=divergent)

    def _build_tree(self, depth, start, direction, eps, joint0) -> _Tree:
        if depth == 0:
            return self._base_tree(start, direction, eps, joint0)
        first = self._build_tree(depth - 1, start, direction, eps, joint0)
        if first.divergent or first.turning:
            return first
        outer = first.right if direction == 1 else first.left
        second = self._build_tree(depth - 1, outer, direction, eps, joint0)
        if direction == 1:
            return _merge(first, second, self.rng, new_side=None)
        return _merge(second, first, self.rng, new_side=None)

    def _transition(self, current: _Leaf, eps: float):
        """One NUTS update from ``current``; returns (leaf, stats)."""
        p0 = self._draw_momentum()
        start = _Leaf(current.q, p0, current.grad, current.logp, self.inv_mass * p0)
        joint0 = start.logp - self._kinetic(p0)
        tree = _Tree(start, logw=0.0, alpha=0.0, divergent=False)
        tree.n_alpha = 0
        depth = 0
        divergent = False
        while depth < self.cfg.max_tree_depth:
            direction = 1 if self.rng.random() < 0.5 else -1
            outer = tree.right if direction == 1 else tree.left
            sub = self._build_tree(depth, outer, direction, eps, joint0)
            if sub.divergent:
                divergent = True
                tree.sum_alpha += sub.sum_alpha
                tree.n_alpha += sub.n_alpha
                break
            if sub.turning:
                tree.sum_alpha += sub.sum_alpha
                tree.n_alpha += sub.n_alpha
                break
            if direction == 1:
                tree = _merge(tree, sub, self.rng, new_side="right")
            else:
                tree = _merge(sub, tree, self.rng, new_side="left")
            depth += 1
            if tree.turning:
                break
        accept = tree.sum_alpha / max(tree.n_alpha, 1)
        return tree.prop, accept, divergent, depth

    # -- step-size search -------------------------------------------------------

    def _find_reasonable_epsilon(self, leaf: _Leaf) -> float:
        eps = 1.0
        p0 = self._draw_momentum()
        start = _Leaf(leaf.q, p0, leaf.grad, leaf.logp, self.inv_mass * p0)
        joint0 = start.logp - self._kinetic(p0)

        def log_ratio(eps):
            try_leaf = self._leapfrog(start, eps)
            joint = try_leaf.logp - self._kinetic(try_leaf.p)
            return joint - joint0 if np.isfinite(joint) else -np.inf

        ratio = log_ratio(eps)
        direction = 1 if ratio > math.log(0.5) else -1
        for _ in range(100):
            eps *= 2.0**direction
            ratio = log_ratio(eps)
            if direction == 1 and not ratio > math.log(0.5):
                break
            if direction == -1 and not ratio < math.log(0.5):
                break
            if eps > 1e7 or eps < 1e-10:
                break
        return eps

    # -- warmup schedule ----------------------------------------------------------

    def _windows(self):
        """(init_buffer, slow window ends, term start) Stan-style schedule."""
        w = self.cfg.warmup
        init, term, base = 75, 50, 25
        if w < init + term + base:
            init = max(1, int(0.15 * w))
            term = max(1, int(0.10 * w))
            base = w - init - term
            if base < 1:
                return init, [], w  # too short for mass adaptation
        ends = []
        size = base
        pos = init
        while pos + size < w - term:
            nxt = size * 2
            if pos + size + nxt > w - term:
                size = (w - term) - pos
            ends.append(pos + size)
            pos += size
            size *= 2
        if not ends or ends[-1] != w - term:
            ends.append(w - term)
        return init, ends, w - term

    # -- main loop -------------------------------------------------------------

    def run(self) -> ChainOutput:
        cfg = self.cfg
        t_start = time.perf_counter()

        q = self._initial_point()
        logp, grad = self._eval(q)
        leaf = _Leaf(q, np.zeros(self.dim), grad, logp, np.zeros(self.dim))

        eps = self._find_reasonable_epsilon(leaf)
        da = _DualAveraging(eps, cfg.target_accept)
        init_buffer, window_ends, term_start = self._windows()
        welford = _Welford(self.dim)

        draws = np.empty((cfg.draws, self.dim))
        accept_stats = np.empty(cfg.draws)
        depth_hist = np.zeros(cfg.max_tree_depth + 1, dtype=np.int64)
        divergences = 0
        post_divergences = 0

        total = cfg.warmup + cfg.draws
        for it in range(total):
            warm = it < cfg.warmup
            leaf, accept, divergent, depth = self._transition(leaf, eps)
            if divergent:
                divergences += 1
                if not warm:
                    post_divergences += 1
            if warm:
                eps = da.update(accept)
                if init_buffer <= it < term_start:
                    welford.add(leaf.q)
                if window_ends and (it + 1) == window_ends[0]:
                    window_ends.pop(0)
                    if welford.count >= 2:
                        self.inv_mass = welford.regularized_variance()
                    welford = _Welford(self.dim)
                    eps = self._find_reasonable_epsilon(leaf)
                    da = _DualAveraging(eps, cfg.target_accept)
                if it + 1 == cfg.warmup:
                    eps = da.adapted()
            else:
                keep = it - cfg.warmup
                draws[keep] = leaf.q
                accept_stats[keep] = accept
                depth_hist[depth] += 1

        if post_divergences > 0.9 * cfg.draws:
            raise AllDivergentError(
                f"{post_divergences}/{cfg.draws} post-warmup transitions diverged"
            )
        return ChainOutput(
            draws=draws,
            accept_stats=accept_stats,
            divergence_count=divergences,
            post_warmup_divergences=post_divergences,
            tree_depth_hist=depth_hist,
            wall_time_seconds=time.perf_counter() - t_start,
            step_size=eps,
            inv_mass=self.inv_mass.copy(),
        )

    def _initial_point(self):
        cfg = self.cfg
        if cfg.init == "zero":
            q = np.zeros(self.dim)
            logp, _ = self._eval(q)
            if not np.isfinite(logp):
                raise InitializationFailedError("log-density not finite at the origin")
            return q
        lo, hi = cfg.init_bounds
        for _ in range(100):
            q = self.rng.uniform(lo, hi, self.dim)
            logp, _ = self._eval(q)
            if np.isfinite(logp):
                return q
        raise InitializationFailedError("no finite starting point in 100 attempts")


class _DualAveraging:
    """Nesterov dual averaging of log step size (Hoffman-Gelman schedule)."""

    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept)
        log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(log_eps)

    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


class _Welford:
    """Streaming mean/variance accumulator."""

    def __init__(self, dim):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self):
        # Shrink toward unit scale the way Stan does, to keep early
        # noisy estimates from destabilising the integrator.
        n = self.count
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


def sample_chain(logdensity_with_grad, dim: int, config: NutsConfig, chain: int) -> ChainOutput:
    """Run one chain; deterministic given ``(config.seed, chain)``."""
    rng = _chain_rng(config.seed, chain)
    with np.errstate(over="ignore", invalid="ignore"):
        # exploding trajectories during step-size search produce transient
        # inf/nan energies; they are rejected as divergent, not raised
        return _NutsChain(logdensity_with_grad, dim, config, rng).run()


def sample(logdensity_with_grad, dim: int, config: NutsConfig) -> list[ChainOutput]:
    """Run ``config.chains`` independent chains sequentially.

    The log-density callable must accept a 1-D array and return
    ``(logp, grad)``; it is called from this thread only, but must be
    safe to share across threads if the caller parallelises chains.
    """
    return [sample_chain(logdensity_with_grad, dim, config, c) for c in range(config.chains)]


def combine_draws(outputs: list[ChainOutput]) -> np.ndarray:
    """Stack post-warmup draws from several chains into one matrix."""
    return np.concatenate([o.draws for o in outputs], axis=0)
