"""Episodes under the stochastic location policy and the training objective.

The objective minimised per batch is

    L = L_theta + lam * (L_sc + L_ior)

where L_theta holds the classification term (cross-entropy in hybrid mode, a
score-function term in strict mode) and the REINFORCE surrogate for the
location policy, both summed over episodes and steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, log, pi

import numpy as np
from scipy import ndimage

from .imaging import (ContextImage, Location, Tile, crop_scaled, fine_window, make_context, pixel_center,
                      suppress_region)
from .nn import (HiddenState, NetConfig, ParameterSet, class_head, encode_patches, encoder_forward, standardize,
                 location_head, recurrent_step, sequence_backward, sequence_forward)


class NumericalError(FloatingPointError):
    pass


@dataclass
class PolicyConfig:
    T: int = 6
    sigma_loc: float = 0.1
    gamma: float = 1.0
    lam: float = 0.04
    baseline_decay: float = 0.9
    mode: str = "hybrid"  # or "strict"
    use_ior: bool = True  # overlap penalty and texture suppression
    use_sc: bool = True
    use_context: bool = True
    stain_threshold: float = 0.8
    min_component_area: int = 16
    location_to_core: bool = True  # False stops the location gradient at the fused features

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.sigma_loc <= 0:
            raise ValueError("sigma_loc must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.mode not in ("hybrid", "strict"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class Episode:
    label: int
    locations: np.ndarray  # (T+1, 2) clamped, l_1 .. l_{T+1}
    samples: np.ndarray  # (T, 2) pre-clamp draws for l_2 .. l_{T+1}
    noise: np.ndarray  # (T, 2) standard-normal draws behind the samples
    location_means: np.ndarray  # (T, 2)
    location_logdensity: np.ndarray  # (T,)
    class_dists: np.ndarray  # (T, classes)
    rewards: np.ndarray  # (T,)
    return_R: float
    l_ior: float
    l_sc: float
    predicted: int
    fine: np.ndarray
    coarse: np.ndarray
    contexts: np.ndarray
    tile_shape: tuple
    sampled_classes: np.ndarray | None = None
    policy_locations: bool = True
    fallback: bool = False

    @property
    def T(self) -> int:
        return len(self.rewards)

    def trace(self) -> dict:
        """Plain-data record for export."""
        return {
            "label": int(self.label),
            "predicted": int(self.predicted),
            "locations": self.locations[: self.T].tolist(),
            "rewards": self.rewards.astype(int).tolist(),
            "class_dists": self.class_dists.tolist(),
            "return": float(self.return_R),
            "l_ior": float(self.l_ior),
            "l_sc": float(self.l_sc),
            "fallback": bool(self.fallback),
        }


@dataclass
class BaselineEstimator:
    values: np.ndarray
    decay: float = 0.9

    @classmethod
    def zeros(cls, T: int, decay: float = 0.9) -> "BaselineEstimator":
        return cls(np.zeros(T), decay)


# -- scalar pieces --------------------------------------------------------------------


def reward(probs, g: int) -> int:
    """1 when the most probable score is ``g``; ties go to the lowest score."""
    return int(int(np.argmax(probs)) == int(g))


def episode_return(rewards, gamma: float = 1.0) -> float:
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    r = np.asarray(rewards, dtype=float)
    return float(np.sum(r * gamma ** np.arange(len(r))))


def rewards_to_go(rewards, gamma: float = 1.0) -> np.ndarray:
    """R_t = sum_{tau >= t} gamma^(tau - t) r_tau along the last axis."""
    r = np.asarray(rewards, dtype=float)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in reversed(range(r.shape[-1])):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return out


def task_reg(probs, g: int, variant: str = "strict") -> float:
    probs = np.asarray(probs)
    if variant == "strict":
        return float(abs(int(np.argmax(probs)) - g))
    if variant == "expected":
        return float(abs(np.dot(np.arange(len(probs)), probs) - g))
    raise ValueError(f"unknown variant {variant!r}")


def update_baseline(baseline: BaselineEstimator, returns_to_go) -> BaselineEstimator:
    """Exponential running mean per step of the batch-mean return-to-go."""
    batch_mean = np.asarray(returns_to_go, dtype=float).reshape(-1, len(baseline.values)).mean(axis=0)
    values = baseline.decay * baseline.values + (1.0 - baseline.decay) * batch_mean
    return BaselineEstimator(values, baseline.decay)


# -- inhibition-of-return penalty -------------------------------------------------------


def _window_lefts(coords, w: int, extent: int, snap: bool):
    if snap:
        centers = np.floor(coords * (extent - 1) + 0.5)
    else:
        centers = coords * (extent - 1)
    raw = centers - w // 2
    left = np.clip(raw, 0, extent - w)
    inside = (raw > 0) & (raw < extent - w)
    return left, inside


def ior_penalty(locations, w: int, shape: tuple, snap: bool = True) -> float:
    """Mean pairwise overlap (as a fraction of w^2) of the fine glimpse footprints.

    ``snap=True`` uses the exact pixel windows that glimpse extraction cuts;
    ``snap=False`` uses the unrounded window positions, which is the form the
    loss differentiates.
    """
    locs = np.asarray(locations, dtype=float)
    T = len(locs)
    if T < 2:
        return 0.0
    ys, _ = _window_lefts(locs[:, 1], w, shape[0], snap)
    xs, _ = _window_lefts(locs[:, 0], w, shape[1], snap)
    ox = np.maximum(0.0, w - np.abs(xs[:, None] - xs[None, :]))
    oy = np.maximum(0.0, w - np.abs(ys[:, None] - ys[None, :]))
    iu = np.triu_indices(T, 1)
    return float((ox * oy)[iu].sum() / (w * w) / comb(T, 2))


def ior_penalty_grad(locations, w: int, shape: tuple) -> tuple[float, np.ndarray]:
    """Unsnapped penalty and its gradient w.r.t. the normalized locations (T, 2)."""
    locs = np.asarray(locations, dtype=float)
    T = len(locs)
    grad = np.zeros_like(locs)
    if T < 2:
        return 0.0, grad
    norm = w * w * comb(T, 2)
    ys, yin = _window_lefts(locs[:, 1], w, shape[0], snap=False)
    xs, xin = _window_lefts(locs[:, 0], w, shape[1], snap=False)
    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    ox = np.maximum(0.0, w - np.abs(dx))
    oy = np.maximum(0.0, w - np.abs(dy))
    upper = np.triu(np.ones((T, T), dtype=bool), 1)
    pair = upper | upper.T  # each unordered pair contributes to both members
    # d ox / d xs_i = -sign(dx_ij) where the windows overlap
    dox = np.where((ox > 0) & pair, -np.sign(dx), 0.0)
    doy = np.where((oy > 0) & pair, -np.sign(dy), 0.0)
    gx = (dox * oy).sum(axis=1) / norm
    gy = (doy * ox).sum(axis=1) / norm
    grad[:, 0] = gx * xin * (shape[1] - 1)
    grad[:, 1] = gy * yin * (shape[0] - 1)
    value = float((ox * oy)[upper].sum() / norm)
    return value, grad


# -- rollouts -------------------------------------------------------------------------


def stain_candidates(tile: Tile, threshold: float = 0.8, min_area: int = 16) -> np.ndarray:
    """(row, col) pixels of the thresholded stain mask after dropping small components."""
    mask = tile.stain > threshold
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros((0, 2), dtype=int)
    sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
    keep = np.isin(labels, np.flatnonzero(sizes >= min_area) + 1)
    return np.argwhere(keep)


def _crop_pair(pixels, loc, w, scales):
    h, wd = pixels.shape[:2]
    cx, cy = pixel_center(loc[0], wd), pixel_center(loc[1], h)
    return crop_scaled(pixels, cx, cy, w, scales[0]), crop_scaled(pixels, cx, cy, w, scales[1])


def _random_location(rng, agent, candidates, shape):
    if agent == "stain" and len(candidates):
        r, c = candidates[rng.integers(len(candidates))]
        return np.array([c / (shape[1] - 1), r / (shape[0] - 1)])
    return rng.uniform(size=2)


def rollout_batch(tiles: list, params: ParameterSet, net: NetConfig, cfg: PolicyConfig, rngs: list,
                  greedy: bool = False, agent: str = "policy", contexts: list | None = None) -> list:
    """Run one episode per tile, all tiles stepped together.

    ``agent`` is "policy" for the learned location policy, or "uniform" /
    "stain" for the non-learned baselines.  ``greedy`` replaces location
    sampling by the mean.  ``contexts`` optionally supplies precomputed
    down-sampled images.
    """
    if agent not in ("policy", "uniform", "stain"):
        raise ValueError(f"unknown agent {agent!r}")
    n, T, w = len(tiles), cfg.T, net.patch
    shape = tiles[0].shape
    ctx = [c.copy() for c in contexts] if contexts is not None else [make_context(t).pixels for t in tiles]
    ctx_objs = [None] * n
    candidates = [None] * n
    fallback = [False] * n
    if agent == "stain":
        for i, tile in enumerate(tiles):
            candidates[i] = stain_candidates(tile, cfg.stain_threshold, cfg.min_component_area)
            fallback[i] = len(candidates[i]) == 0

    locs = np.zeros((n, T + 1, 2))
    for i in range(n):
        locs[i, 0] = _random_location(rngs[i], agent, candidates[i], shape)
    samples = np.zeros((n, T, 2))
    noise = np.zeros((n, T, 2))
    mus = np.zeros((n, T, 2))
    logd = np.zeros((n, T))
    probs_all = np.zeros((n, T, net.classes))
    sampled = np.zeros((n, T), dtype=int) if cfg.mode == "strict" else None
    fine = np.zeros((n, T, w, w, 3))
    coarse = np.zeros((n, T, w, w, 3))
    ctx_rec = np.zeros((n, T) + ctx[0].shape)
    state = HiddenState.zeros(net, n)
    const = -log(2 * pi * cfg.sigma_loc**2)

    for t in range(T):
        for i, tile in enumerate(tiles):
            fine[i, t], coarse[i, t] = _crop_pair(tile.pixels, locs[i, t], w, net.scales)
        v, _ = encode_patches(params, net, fine[:, t], coarse[:, t])
        state, h2 = recurrent_step(v, state, params)
        probs = class_head(h2, params)
        probs_all[:, t] = probs
        if sampled is not None:
            for i in range(n):
                sampled[i, t] = rngs[i].choice(net.classes, p=probs[i])
        if agent == "policy":
            if cfg.use_ior:
                for i in range(n):
                    ctx_objs[i] = suppress_region(ContextImage(pixels=ctx[i]), Location(*locs[i, t]), w)
                    ctx[i] = ctx_objs[i].pixels
            ctx_rec[:, t] = np.stack(ctx)
            if cfg.use_context:
                v16, _ = encoder_forward(params, "theta_c2", standardize(ctx_rec[:, t], net), net.context_pool)
            else:
                v16 = np.ones((n, net.context_features))
            mu = location_head(h2, v16, params)
            if not np.all(np.isfinite(mu)):
                raise NumericalError(f"non-finite location mean at step {t}")
            if greedy:
                eps = np.zeros((n, 2))
            else:
                eps = np.stack([rngs[i].standard_normal(2) for i in range(n)])
            s = mu + cfg.sigma_loc * eps
            mus[:, t] = mu
            samples[:, t] = s
            noise[:, t] = eps
            logd[:, t] = const - 0.5 * (eps**2).sum(axis=1)
            locs[:, t + 1] = np.clip(s, 0.0, 1.0)
        else:
            for i in range(n):
                locs[i, t + 1] = _random_location(rngs[i], agent, candidates[i], shape)
            mus[:, t] = locs[:, t + 1]
            samples[:, t] = locs[:, t + 1]

    episodes = []
    for i, tile in enumerate(tiles):
        g = tile.label
        if sampled is not None:
            r = (sampled[i] == g).astype(float)
        else:
            r = (np.argmax(probs_all[i], axis=1) == g).astype(float)
        episodes.append(Episode(
            label=g,
            locations=locs[i],
            samples=samples[i],
            noise=noise[i],
            location_means=mus[i],
            location_logdensity=logd[i],
            class_dists=probs_all[i],
            rewards=r,
            return_R=episode_return(r, cfg.gamma),
            l_ior=ior_penalty(locs[i, :T], w, shape),
            l_sc=task_reg(probs_all[i, -1], g, "strict"),
            predicted=int(np.argmax(probs_all[i, -1])),
            fine=fine[i],
            coarse=coarse[i],
            contexts=ctx_rec[i],
            tile_shape=shape,
            sampled_classes=None if sampled is None else sampled[i],
            policy_locations=agent == "policy",
            fallback=fallback[i],
        ))
    return episodes


def rollout(tile: Tile, params: ParameterSet, net: NetConfig, cfg: PolicyConfig, rng,
            greedy: bool = False) -> Episode:
    return rollout_batch([tile], params, net, cfg, [rng], greedy=greedy)[0]


def random_agent(tile: Tile, params: ParameterSet, net: NetConfig, cfg: PolicyConfig, rng,
                 mode: str = "uniform") -> Episode:
    return rollout_batch([tile], params, net, cfg, [rng], agent=mode)[0]


def glimpse_hits(tile: Tile, locations, w: int) -> np.ndarray:
    """Whether each fine glimpse footprint touches the relevance mask."""
    hits = []
    for x, y in np.asarray(locations):
        top, left = fine_window(Location(x, y), w, tile.shape)
        hits.append(bool(tile.relevance[top : top + w, left : left + w].any()))
    return np.array(hits)


# -- objective ------------------------------------------------------------------------


def reinforce_terms(samples, mu, advantages, sigma: float) -> tuple[float, np.ndarray]:
    """Surrogate -sum(adv * log N(sample; mu, sigma^2 I)) and its gradient w.r.t. ``mu``.

    samples, mu: (..., 2); advantages: (...,).  Samples are held fixed, so
    the gradient is the score-function estimate of -d E[R] / d mu.
    """
    sig2 = sigma**2
    diff = np.asarray(samples) - mu
    logp = -log(2 * pi * sig2) - 0.5 * (diff**2).sum(axis=-1) / sig2
    return float(-(advantages * logp).sum()), -advantages[..., None] * diff / sig2


def bandit_gradient(mu, sigma: float, box, episodes: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """REINFORCE estimate of d P(reward) / d mu for a single Gaussian location.

    The location is sampled once, clamped to the unit square and rewarded
    with 1 inside ``box = (x0, x1, y0, y1)``.  Returns the per-coordinate
    mean and standard error over ``episodes`` single-sample estimates.
    """
    mu = np.asarray(mu, dtype=float)
    s = mu + sigma * rng.standard_normal((episodes, 2))
    loc = np.clip(s, 0.0, 1.0)
    x0, x1, y0, y1 = box
    r = ((loc[:, 0] >= x0) & (loc[:, 0] <= x1) & (loc[:, 1] >= y0) & (loc[:, 1] <= y1)).astype(float)
    _, dmu = reinforce_terms(s, np.broadcast_to(mu, s.shape), r, sigma)
    per = -dmu
    return per.mean(axis=0), per.std(axis=0, ddof=1) / np.sqrt(episodes)


@dataclass
class LossBreakdown:
    total: float
    l_theta: float
    l_sc: float
    l_ior: float
    classification: float
    reinforce: float
    l_sc_strict: float = 0.0
    extras: dict = field(default_factory=dict)


def _stack(episodes, name):
    return np.stack([getattr(e, name) for e in episodes])


def loss_and_grad(episodes: list, params: ParameterSet, net: NetConfig, cfg: PolicyConfig,
                  baseline: BaselineEstimator) -> tuple[LossBreakdown, ParameterSet]:
    """Replay recorded episodes and return the batch objective with its gradient.

    Recorded glimpses, contexts and noise draws are held fixed; the location
    means, class distributions and the reparameterized locations entering the
    overlap penalty are recomputed from ``params``.
    """
    if not np.all(np.isfinite(baseline.values)):
        raise NumericalError("baseline is not finite")
    T = cfg.T
    labels = np.array([e.label for e in episodes])
    n = len(episodes)
    fine, coarse = _stack(episodes, "fine"), _stack(episodes, "coarse")
    contexts = _stack(episodes, "contexts")
    policy = np.array([e.policy_locations for e in episodes], dtype=float)
    out, cache = sequence_forward(params, net, fine, coarse, contexts, use_context=cfg.use_context)
    probs, mu = out.probs, out.mu
    onehot = np.eye(net.classes)[labels][:, None, :]

    rewards = _stack(episodes, "rewards")
    rtg = rewards_to_go(rewards, cfg.gamma)
    adv = rtg - baseline.values[None, :]

    dlogits = np.zeros_like(probs)
    dmu = np.zeros_like(mu)

    if cfg.mode == "hybrid":
        picked = np.take_along_axis(probs, labels[:, None, None].repeat(T, axis=1), axis=2)[..., 0]
        classification = -np.log(picked).sum()
        dlogits += probs - onehot
    else:
        yhat = _stack(episodes, "sampled_classes")
        picked = np.take_along_axis(probs, yhat[..., None], axis=2)[..., 0]
        classification = -(adv * np.log(picked)).sum()
        dlogits += -adv[..., None] * (np.eye(net.classes)[yhat] - probs)

    reinforce, dmu_loc = reinforce_terms(_stack(episodes, "samples"), mu, adv * policy[:, None], cfg.sigma_loc)
    dmu += dmu_loc
    l_theta = classification + reinforce

    l_sc = 0.0
    strict_sc = 0.0
    if cfg.use_sc:
        pT = probs[:, -1]
        expected = pT @ np.arange(net.classes)
        gap = expected - labels
        l_sc = float(np.abs(gap).sum())
        dp = np.sign(gap)[:, None] * np.arange(net.classes)[None, :]
        dlogits[:, -1] += cfg.lam * pT * (dp - (pT * dp).sum(axis=1, keepdims=True))
    strict_sc = float(np.abs(np.argmax(probs[:, -1], axis=1) - labels).sum())

    l_ior = 0.0
    if cfg.use_ior and T >= 2:
        noise = _stack(episodes, "noise")
        first = _stack(episodes, "locations")[:, 0]
        for i in range(n):
            if not episodes[i].policy_locations:
                continue
            raw = mu[i, : T - 1] + cfg.sigma_loc * noise[i, : T - 1]
            inside = (raw > 0) & (raw < 1)
            locs = np.vstack([first[i], np.clip(raw, 0.0, 1.0)])
            value, g = ior_penalty_grad(locs, net.patch, episodes[i].tile_shape)
            l_ior += value
            dmu[i, : T - 1] += cfg.lam * g[1:] * inside

    grads = sequence_backward(dlogits, dmu, cache, location_to_core=cfg.location_to_core)
    bad = [k for k, v in grads.items() if not np.all(np.isfinite(v))]
    if bad or not np.isfinite(l_theta):
        raise NumericalError(f"non-finite gradient in {bad or ['loss']} (batch of {n})")
    total = l_theta + cfg.lam * (l_sc + l_ior)
    breakdown = LossBreakdown(total=float(total), l_theta=float(l_theta), l_sc=float(l_sc), l_ior=float(l_ior),
                              classification=float(classification), reinforce=float(reinforce),
                              l_sc_strict=strict_sc, extras={"returns_to_go": rtg})
    return breakdown, grads
