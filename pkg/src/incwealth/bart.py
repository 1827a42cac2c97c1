"""Sum-of-trees regression and probit classification via backfitting MCMC.

Trees are grown/pruned/changed with Metropolis-Hastings steps against the
leaf-marginalized likelihood; leaf values and the residual variance have
conjugate updates. The probit variant augments binary outcomes with latent
Gaussians truncated at zero and runs the regression machinery on the
latents with unit variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2, truncnorm


class BartError(ValueError):
    pass


@dataclass
class BartConfig:
    n_trees: int = 50
    iterations: int = 2_000
    burn_in: int = 500
    keep_every: int = 10
    alpha: float = 0.95  # depth-d split probability alpha*(1+d)^-beta
    beta: float = 2.0
    k: float = 2.0  # leaf prior spread multiplier
    nu: float = 3.0
    q: float = 0.9
    max_depth: int | None = None  # 0 forces stumps
    p_grow: float = 0.28
    p_prune: float = 0.28

    def validate(self):
        if not (0 < self.burn_in < self.iterations):
            raise BartError("need 0 < burn_in < iterations")
        if self.n_trees < 1:
            raise BartError("need at least one tree")
        if self.keep_every < 1:
            raise BartError("keep_every >= 1")


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "value", "depth", "rows")

    def __init__(self, depth, rows):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = 0.0
        self.depth = depth
        self.rows = rows  # training row indices reaching this node

    @property
    def is_leaf(self):
        return self.left is None


class _Tree:
    def __init__(self, n_rows):
        self.root = _Node(0, np.arange(n_rows))

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.append(node.left)
                stack.append(node.right)
        return out

    def nog_nodes(self):
        """Internal nodes whose children are both leaves."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            if node.left.is_leaf and node.right.is_leaf:
                out.append(node)
            stack.extend((node.left, node.right))
        return out

    def predict_rows(self, n_rows):
        out = np.empty(n_rows)
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out[node.rows] = node.value
            else:
                stack.extend((node.left, node.right))
        return out

    def snapshot(self):
        feats, thrs, lefts, rights, vals = [], [], [], [], []

        def walk(node):
            idx = len(feats)
            feats.append(node.feature)
            thrs.append(node.threshold)
            lefts.append(-1)
            rights.append(-1)
            vals.append(node.value)
            if not node.is_leaf:
                lefts[idx] = walk(node.left)
                rights[idx] = walk(node.right)
            return idx

        walk(self.root)
        return (
            np.array(feats, dtype=np.int64),
            np.array(thrs, dtype=float),
            np.array(lefts, dtype=np.int64),
            np.array(rights, dtype=np.int64),
            np.array(vals, dtype=float),
        )


def _eval_snapshot(snap, x):
    feats, thrs, lefts, rights, vals = snap
    out = np.empty(x.shape[0])
    stack = [(0, np.arange(x.shape[0]))]
    while stack:
        nid, rows = stack.pop()
        if lefts[nid] < 0:
            out[rows] = vals[nid]
            continue
        go_left = x[rows, feats[nid]] <= thrs[nid]
        stack.append((lefts[nid], rows[go_left]))
        stack.append((rights[nid], rows[~go_left]))
    return out


def _split_prob(depth, cfg):
    if cfg.max_depth is not None and depth >= cfg.max_depth:
        return 0.0
    return cfg.alpha * (1.0 + depth) ** (-cfg.beta)


def _leaf_log_ml(n, s, sigma2, sigma_mu2):
    """Log marginal likelihood term of one leaf (residual base factor dropped)."""
    denom = sigma2 + n * sigma_mu2
    return 0.5 * math.log(sigma2 / denom) + (sigma_mu2 * s * s) / (2.0 * sigma2 * denom)


def _available_cuts(x_col, rows):
    vals = np.unique(x_col[rows])
    return vals[:-1]  # splitting at the max would empty the right child


class _Sampler:
    """Backfitting state shared by the regression and probit fits."""

    def __init__(self, x, cfg, rng):
        self.x = x
        self.cfg = cfg
        self.rng = rng
        self.n, self.p = x.shape
        self.trees = [_Tree(self.n) for _ in range(cfg.n_trees)]
        self.tree_fit = np.zeros((cfg.n_trees, self.n))
        self.total_fit = np.zeros(self.n)

    def _propose_rule(self, node):
        feats = self.rng.permutation(self.p)
        for f in feats:
            cuts = _available_cuts(self.x[:, f], node.rows)
            if cuts.size:
                # count available features exactly (needed for the MH ratio)
                n_feats = sum(
                    1 for g in range(self.p) if _available_cuts(self.x[:, g], node.rows).size
                )
                thr = cuts[self.rng.integers(cuts.size)]
                return int(f), float(thr), n_feats, cuts.size
        return None

    def _update_tree(self, m, resid, sigma2, sigma_mu2):
        tree = self.trees[m]
        cfg = self.cfg
        leaves, nogs, parents = _collect(tree)

        # constant move probabilities; impossible moves fall through as a
        # rejected (null) proposal, which keeps detailed balance
        u = self.rng.random()
        if u < cfg.p_grow:
            self._try_grow(tree, leaves, nogs, parents, resid, sigma2, sigma_mu2)
        elif u < cfg.p_grow + cfg.p_prune:
            self._try_prune(tree, leaves, nogs, resid, sigma2, sigma_mu2)
        else:
            self._try_change(tree, nogs, resid, sigma2, sigma_mu2)

        # conjugate leaf value draws for the (possibly updated) structure
        fit = np.empty(self.n)
        for leaf in tree.leaves():
            rows = leaf.rows
            nl = rows.size
            s = float(resid[rows].sum())
            post_var = sigma2 * sigma_mu2 / (sigma2 + nl * sigma_mu2)
            post_mean = sigma_mu2 * s / (sigma2 + nl * sigma_mu2)
            leaf.value = post_mean + math.sqrt(post_var) * self.rng.standard_normal()
            fit[rows] = leaf.value
        return fit

    def _try_grow(self, tree, leaves, nogs, parents, resid, sigma2, sigma_mu2):
        cfg = self.cfg
        leaf = leaves[self.rng.integers(len(leaves))]
        if leaf.rows.size < 2:
            return
        p_split = _split_prob(leaf.depth, cfg)
        if p_split <= 0.0:
            return
        rule = self._propose_rule(leaf)
        if rule is None:
            return
        f, thr, n_feats, n_cuts = rule
        go_left = self.x[leaf.rows, f] <= thr
        rows_l = leaf.rows[go_left]
        rows_r = leaf.rows[~go_left]
        if rows_l.size == 0 or rows_r.size == 0:
            return

        s_all = float(resid[leaf.rows].sum())
        s_l = float(resid[rows_l].sum())
        log_lik_ratio = (
            _leaf_log_ml(rows_l.size, s_l, sigma2, sigma_mu2)
            + _leaf_log_ml(rows_r.size, s_all - s_l, sigma2, sigma_mu2)
            - _leaf_log_ml(leaf.rows.size, s_all, sigma2, sigma_mu2)
        )
        p_child = _split_prob(leaf.depth + 1, cfg)
        log_prior_ratio = (
            math.log(p_split)
            + 2.0 * math.log1p(-p_child)
            - math.log1p(-p_split)
            - math.log(n_feats * n_cuts)
        )
        # growing this leaf adds one nog node and, if its parent was a nog,
        # removes that one
        parent = parents.get(id(leaf))
        n_nog_after = len(nogs) + 1 - (1 if parent is not None and parent in nogs else 0)
        # transition: forward grow picks (leaf, feature, cut); reverse prune picks the new nog
        log_trans_ratio = (
            math.log(self.cfg.p_prune)
            - math.log(max(n_nog_after, 1))
            - math.log(self.cfg.p_grow)
            + math.log(len(leaves) * n_feats * n_cuts)
        )
        if math.log(self.rng.random()) < log_lik_ratio + log_prior_ratio + log_trans_ratio:
            leaf.feature = f
            leaf.threshold = thr
            leaf.left = _Node(leaf.depth + 1, rows_l)
            leaf.right = _Node(leaf.depth + 1, rows_r)

    def _try_prune(self, tree, leaves, nogs, resid, sigma2, sigma_mu2):
        cfg = self.cfg
        if not nogs:
            return
        node = nogs[self.rng.integers(len(nogs))]
        rows_l, rows_r = node.left.rows, node.right.rows
        s_l = float(resid[rows_l].sum())
        s_r = float(resid[rows_r].sum())
        log_lik_ratio = (
            _leaf_log_ml(node.rows.size, s_l + s_r, sigma2, sigma_mu2)
            - _leaf_log_ml(rows_l.size, s_l, sigma2, sigma_mu2)
            - _leaf_log_ml(rows_r.size, s_r, sigma2, sigma_mu2)
        )
        p_split = _split_prob(node.depth, cfg)
        p_child = _split_prob(node.depth + 1, cfg)
        n_feats = sum(1 for g in range(self.p) if _available_cuts(self.x[:, g], node.rows).size)
        n_cuts = _available_cuts(self.x[:, node.feature], node.rows).size
        if n_feats == 0 or n_cuts == 0:
            return
        log_prior_ratio = -(
            math.log(p_split)
            + 2.0 * math.log1p(-p_child)
            - math.log1p(-p_split)
            - math.log(n_feats * n_cuts)
        )
        n_leaves_after = len(leaves) - 1
        log_trans_ratio = (
            math.log(cfg.p_grow)
            - math.log(n_leaves_after * n_feats * n_cuts)
            - math.log(cfg.p_prune)
            + math.log(len(nogs))
        )
        if math.log(self.rng.random()) < log_lik_ratio + log_prior_ratio + log_trans_ratio:
            node.left = None
            node.right = None
            node.feature = -1

    def _try_change(self, tree, nogs, resid, sigma2, sigma_mu2):
        if not nogs:
            return
        node = nogs[self.rng.integers(len(nogs))]
        rule = self._propose_rule(node)
        if rule is None:
            return
        f, thr, _, _ = rule
        go_left = self.x[node.rows, f] <= thr
        rows_l = node.rows[go_left]
        rows_r = node.rows[~go_left]
        if rows_l.size == 0 or rows_r.size == 0:
            return
        s_l_new = float(resid[rows_l].sum())
        s_r_new = float(resid[rows_r].sum())
        s_l_old = float(resid[node.left.rows].sum())
        s_r_old = float(resid[node.right.rows].sum())
        log_ratio = (
            _leaf_log_ml(rows_l.size, s_l_new, sigma2, sigma_mu2)
            + _leaf_log_ml(rows_r.size, s_r_new, sigma2, sigma_mu2)
            - _leaf_log_ml(node.left.rows.size, s_l_old, sigma2, sigma_mu2)
            - _leaf_log_ml(node.right.rows.size, s_r_old, sigma2, sigma_mu2)
        )
        if math.log(self.rng.random()) < log_ratio:
            node.feature = f
            node.threshold = thr
            node.left.rows = rows_l
            node.right.rows = rows_r


def _collect(tree):
    """One walk gathering leaves, nog nodes and a child-id -> parent map."""
    leaves, nogs = [], []
    parents = {}
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            leaves.append(node)
            continue
        parents[id(node.left)] = node
        parents[id(node.right)] = node
        if node.left.is_leaf and node.right.is_leaf:
            nogs.append(node)
        stack.extend((node.left, node.right))
    return leaves, nogs, parents


@dataclass
class Ensemble:
    """Stored posterior draws of a fitted tree ensemble."""

    kind: str  # 'regression' or 'probit'
    snapshots: list  # per kept draw: list of tree snapshots
    sigma2_trace: np.ndarray
    y_offset: float
    y_scale: float
    probit_offset: float
    n_features: int
    config: BartConfig

    @property
    def n_draws(self) -> int:
        return len(self.snapshots)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise BartError("covariate matrix does not match the training schema")
        return x

    def predict_draws(self, x) -> np.ndarray:
        """Per-draw sum-of-trees output on the original response scale."""
        x = self._check(x)
        out = np.zeros((self.n_draws, x.shape[0]))
        for d, trees in enumerate(self.snapshots):
            g = np.zeros(x.shape[0])
            for snap in trees:
                g += _eval_snapshot(snap, x)
            out[d] = g
        if self.kind == "regression":
            return out * self.y_scale + self.y_offset
        return out

    def predict(self, x) -> np.ndarray:
        """Posterior-mean prediction (regression scale)."""
        if self.kind != "regression":
            raise BartError("predict() is for regression; use predict_proba()")
        return self.predict_draws(x).mean(axis=0)

    def predict_proba(self, x) -> np.ndarray:
        """Posterior-mean employment-style class probability, strictly in (0,1)."""
        if self.kind != "probit":
            raise BartError("predict_proba() is for probit ensembles")
        g = self.predict_draws(x)
        p = ndtr(g + self.probit_offset).mean(axis=0)
        eps = 1e-12
        return np.clip(p, eps, 1.0 - eps)

    def to_json_dict(self) -> dict:
        draws = []
        for trees in self.snapshots:
            draws.append(
                [
                    {
                        "feature": snap[0].tolist(),
                        "threshold": snap[1].tolist(),
                        "left": snap[2].tolist(),
                        "right": snap[3].tolist(),
                        "value": snap[4].tolist(),
                    }
                    for snap in trees
                ]
            )
        return {
            "kind": self.kind,
            "y_offset": self.y_offset,
            "y_scale": self.y_scale,
            "probit_offset": self.probit_offset,
            "n_features": self.n_features,
            "draws": draws,
        }


def _run_chain(x, y_scaled, cfg, rng, sigma2_fixed=None, latent_refresh=None):
    """Shared backfitting loop; ``latent_refresh`` redraws y_scaled in place."""
    n = x.shape[0]
    sampler = _Sampler(x, cfg, rng)
    sigma_mu = 0.5 / (cfg.k * math.sqrt(cfg.n_trees)) if sigma2_fixed is None else 3.0 / (
        cfg.k * math.sqrt(cfg.n_trees)
    )
    sigma_mu2 = sigma_mu * sigma_mu

    if sigma2_fixed is None:
        sd_y = float(np.std(y_scaled))
        lam = sd_y * sd_y * chi2.ppf(1.0 - cfg.q, cfg.nu) / cfg.nu
        sigma2 = sd_y * sd_y
    else:
        sigma2 = sigma2_fixed

    snaps = []
    sigma2_trace = []
    for it in range(cfg.iterations):
        if latent_refresh is not None:
            latent_refresh(sampler.total_fit, y_scaled)
        for m in range(cfg.n_trees):
            resid = y_scaled - (sampler.total_fit - sampler.tree_fit[m])
            new_fit = sampler._update_tree(m, resid, sigma2, sigma_mu2)
            sampler.total_fit += new_fit - sampler.tree_fit[m]
            sampler.tree_fit[m] = new_fit
        if sigma2_fixed is None:
            err = y_scaled - sampler.total_fit
            shape = 0.5 * (cfg.nu + n)
            rate = 0.5 * (cfg.nu * lam + float(err @ err))
            sigma2 = rate / rng.gamma(shape, 1.0)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.keep_every == 0:
            snaps.append([t.snapshot() for t in sampler.trees])
            sigma2_trace.append(sigma2)
    return snaps, np.array(sigma2_trace)


def fit_regression(x, y, config: BartConfig | None = None, seed: int = 0) -> Ensemble:
    """Fit the sum-of-trees regression. Deterministic given ``seed``."""
    cfg = config or BartConfig()
    cfg.validate()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise BartError("x must be (n, p) aligned with y")
    if x.shape[0] < 30:
        raise BartError("need at least 30 observations")
    y_range = float(np.ptp(y))
    if y_range == 0.0:
        raise BartError("constant response: nothing to fit")
    offset = float(np.min(y))
    y_scaled = (y - offset) / y_range - 0.5
    rng = np.random.Generator(np.random.PCG64(seed))
    snaps, sigma2_trace = _run_chain(x, y_scaled, cfg, rng)
    return Ensemble(
        kind="regression",
        snapshots=snaps,
        sigma2_trace=sigma2_trace,
        y_offset=offset + 0.5 * y_range,
        y_scale=y_range,
        probit_offset=0.0,
        n_features=x.shape[1],
        config=cfg,
    )


def fit_probit(x, z, config: BartConfig | None = None, seed: int = 0) -> Ensemble:
    """Fit the probit classifier with truncated-Gaussian augmentation."""
    cfg = config or BartConfig()
    cfg.validate()
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    if set(np.unique(z)) - {0, 1, True, False}:
        raise BartError("z must be binary")
    z = z.astype(int)
    if z.min() == z.max():
        raise BartError("both classes must be present")
    if x.ndim != 2 or x.shape[0] != z.shape[0]:
        raise BartError("x must be (n, p) aligned with z")

    pbar = float(np.clip(z.mean(), 1e-3, 1.0 - 1e-3))
    offset = float(ndtri(pbar))
    rng = np.random.Generator(np.random.PCG64(seed))
    pos = z == 1

    def refresh(total_fit, latents):
        mean = total_fit + offset
        a = (0.0 - mean[pos])  # lower bound in standard units
        latents[pos] = truncnorm.rvs(a, np.inf, loc=mean[pos], scale=1.0, random_state=rng) - offset
        b = (0.0 - mean[~pos])
        latents[~pos] = truncnorm.rvs(-np.inf, b, loc=mean[~pos], scale=1.0, random_state=rng) - offset

    latents = np.where(pos, 0.5, -0.5).astype(float)
    snaps, sigma2_trace = _run_chain(x, latents, cfg, rng, sigma2_fixed=1.0, latent_refresh=refresh)
    return Ensemble(
        kind="probit",
        snapshots=snaps,
        sigma2_trace=sigma2_trace,
        y_offset=0.0,
        y_scale=1.0,
        probit_offset=offset,
        n_features=x.shape[1],
        config=cfg,
    )


class PersonEncoder:
    """Covariate matrix builder for person records.

    Employment-status covariates: gender, education level, age, marital
    status, dependent children. Income imputation adds job tenure as the
    experience proxy. Unordered categories are one-hot encoded; levels never
    seen in training map to the most frequent training level with a warning.
    """

    def __init__(self, include_tenure: bool = False):
        self.include_tenure = include_tenure
        self.gender_levels: list[str] = []
        self.marital_levels: list[str] = []
        self._gender_mode = ""
        self._marital_mode = ""

    def fit(self, persons) -> "PersonEncoder":
        genders = [p.gender for p in persons]
        maritals = [p.marital_status for p in persons]
        self.gender_levels = sorted(set(genders))
        self.marital_levels = sorted(set(maritals))
        self._gender_mode = max(self.gender_levels, key=genders.count)
        self._marital_mode = max(self.marital_levels, key=maritals.count)
        return self

    @property
    def n_features(self) -> int:
        base = 3 + len(self.gender_levels) + len(self.marital_levels)
        return base + (1 if self.include_tenure else 0)

    def _map_level(self, value, levels, mode, what):
        if value not in levels:
            warnings.warn(f"unseen {what} level {value!r}; using most frequent training level")
            value = mode
        return levels.index(value)

    def transform(self, persons) -> np.ndarray:
        if not self.gender_levels:
            raise BartError("encoder must be fit before transform")
        n = len(persons)
        x = np.zeros((n, self.n_features))
        for i, p in enumerate(persons):
            col = 0
            x[i, col] = p.education
            col += 1
            x[i, col] = p.age
            col += 1
            x[i, col] = p.n_children
            col += 1
            g = self._map_level(p.gender, self.gender_levels, self._gender_mode, "gender")
            x[i, col + g] = 1.0
            col += len(self.gender_levels)
            m = self._map_level(p.marital_status, self.marital_levels, self._marital_mode, "marital status")
            x[i, col + m] = 1.0
            col += len(self.marital_levels)
            if self.include_tenure:
                x[i, col] = p.tenure_years
        return x
