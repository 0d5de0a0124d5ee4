# Whitening and infomax ICA
# bci_hand/utils/ica.py
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import ortho_group

from bci_hand.core.errors import DimensionMismatch, IcaDiverged, RankDeficient, SingularMatrix
from bci_hand.models.recording import TrialEpoch, UnmixingResult, WhiteningTransform

logger = logging.getLogger(__name__)

# Weights above this magnitude count as a blow-up
MAX_WEIGHT = 1e8


@dataclass
class InfomaxParams:
    lr0: Optional[float] = None
    anneal: float = 0.9
    anneal_deg: float = 60.0
    max_iter: int = 512
    tol: float = 1e-3
    block_size: Optional[int] = None
    max_restarts: int = 5
    min_lr: float = 1e-10
    seed: int = 0


@dataclass
class InfomaxFit:
    W: np.ndarray
    iteration_log: List[Tuple[int, float, float]]
    n_restarts: int
    converged: bool


def whiten(data: np.ndarray, retain: float = 0.999,
           n_components: Optional[int] = None) -> Tuple[np.ndarray, WhiteningTransform]:
    """PCA sphering keeping the smallest k components that hold `retain` of the variance"""
    data = np.asarray(data, dtype=float)
    n_channels, n_samples = data.shape
    if n_samples <= n_channels:
        raise ValueError(f"need more samples ({n_samples}) than channels ({n_channels})")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite values")

    mean = data.mean(axis=1)
    centered = data - mean[:, None]
    cov = centered @ centered.T / (n_samples - 1)
    eigvals, eigvecs = linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    # Deterministic sign: largest-magnitude loading positive
    signs = np.sign(eigvecs[np.abs(eigvecs).argmax(axis=0), np.arange(n_channels)])
    eigvecs = eigvecs * np.where(signs == 0, 1.0, signs)

    total = eigvals.sum()
    tol = eigvals[0] * n_channels * np.finfo(float).eps if eigvals[0] > 0 else np.finfo(float).tiny
    rank = int(np.sum(eigvals > tol))
    if n_components is not None:
        k = n_components
    elif retain >= 1.0:
        k = n_channels
    else:
        k = int(np.searchsorted(np.cumsum(eigvals) / total, retain) + 1)
    k = min(k, n_channels)
    if k > rank:
        raise RankDeficient(f"{k} components requested but numerical rank is {rank}", rank=rank)

    matrix = eigvecs[:, :k].T / np.sqrt(eigvals[:k])[:, None]
    transform = WhiteningTransform(mean=mean, matrix=matrix, eigenvalues=eigvals)
    logger.info(f"Whitening kept {k} of {n_channels} dimensions "
                f"({eigvals[:k].sum() / total:.4%} of variance)")
    return matrix @ centered, transform


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.degrees(np.arccos(np.clip(np.sum(a * b) / denom, -1.0, 1.0))))


def infomax(whitened: np.ndarray, params: InfomaxParams) -> InfomaxFit:
    """Natural-gradient infomax with a logistic nonlinearity.

    Update per block: W += lr * (I + (1 - 2 g(u)) u^T / B) W with u = W x and g the
    logistic function. The learning rate is annealed when successive pass updates turn
    by more than `anneal_deg`; blow-ups restart from a seeded orthonormal matrix at half
    the learning rate.
    """
    k, n = whitened.shape
    rng = np.random.default_rng(params.seed)
    lr = params.lr0 if params.lr0 is not None else (0.01 / np.log(k) if k > 1 else 0.01)
    block = params.block_size or max(int(np.sqrt(n / 3.0)), 1)
    block = min(block, n)
    eye = np.eye(k)

    W = np.eye(k)
    for restart in range(params.max_restarts + 1):
        log: List[Tuple[int, float, float]] = []
        prev_delta = None
        diverged = False
        converged = False
        for iteration in range(1, params.max_iter + 1):
            W_start = W.copy()
            perm = rng.permutation(n)
            for start in range(0, n, block):
                x = whitened[:, perm[start:start + block]]
                u = W @ x
                y = 1.0 - 2.0 * expit(u)
                W = W + lr * (eye + (y @ u.T) / x.shape[1]) @ W
            if not np.all(np.isfinite(W)) or np.abs(W).max() > MAX_WEIGHT:
                diverged = True
                break
            delta = W - W_start
            change = float(np.linalg.norm(delta, "fro"))
            log.append((iteration, float(lr), change))
            if change < params.tol:
                converged = True
                break
            if prev_delta is not None and _angle_deg(delta, prev_delta) > params.anneal_deg:
                lr *= params.anneal
            prev_delta = delta
            if lr < params.min_lr:
                logger.info(f"Infomax learning rate fell below {params.min_lr:g}; stopping")
                converged = True
                break
        if not diverged:
            if not converged:
                logger.warning(f"Infomax reached max_iter={params.max_iter} without meeting tol")
            return InfomaxFit(W=W, iteration_log=log, n_restarts=restart, converged=converged)
        lr *= 0.5
        if restart == params.max_restarts:
            break
        logger.warning(f"Infomax diverged; restart {restart + 1} with learning rate {lr:.3g}")
        W = ortho_group.rvs(k, random_state=rng) if k > 1 else np.eye(1)
    raise IcaDiverged(f"infomax diverged after {params.max_restarts} restarts")


def fit_ica(data: np.ndarray, params: InfomaxParams, retain: float = 0.999,
            n_components: Optional[int] = None) -> UnmixingResult:
    """Standardize channels, whiten, then run infomax.

    The channel scaling is folded into the whitening matrix, so the transform applies to
    raw data and a per-channel gain leaves the recovered sources unchanged. Mixing is the
    pseudo-inverse of the total unmixing.
    """
    data = np.asarray(data, dtype=float)
    scale = data.std(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    whitened, standardized = whiten(data / scale[:, None], retain=retain, n_components=n_components)
    transform = WhiteningTransform(mean=standardized.mean * scale,
                                   matrix=standardized.matrix / scale[None, :],
                                   eigenvalues=standardized.eigenvalues)
    fit = infomax(whitened, params)
    mixing = np.linalg.pinv(fit.W @ transform.matrix)
    logger.info(f"ICA fit {fit.W.shape[0]} components in {len(fit.iteration_log)} passes "
                f"({fit.n_restarts} restarts, converged={fit.converged})")
    return UnmixingResult(whitening=transform, W=fit.W, mixing=mixing,
                          iteration_log=fit.iteration_log, seed=params.seed,
                          n_restarts=fit.n_restarts, converged=fit.converged)


def activations(epochs: Sequence[TrialEpoch], result: UnmixingResult) -> List[np.ndarray]:
    """Component time courses per trial: W . whitening . (data - mean)"""
    filters = result.filters
    mean = result.whitening.mean
    out = []
    for ep in epochs:
        if ep.data.shape[0] != filters.shape[1]:
            raise DimensionMismatch(f"trial {ep.meta.stem} has {ep.data.shape[0]} channels, "
                                    f"unmixing expects {filters.shape[1]}")
        out.append(filters @ (ep.data - mean[:, None]))
    return out


def amari_index(W_total: np.ndarray, A_true: np.ndarray) -> float:
    """Amari distance of P = W_total . A_true from a scaled permutation.

    Row and column terms are each normalized by 2k(k-1) and averaged, so the index is
    0 for a scaled permutation and 0.5 for an all-ones matrix.
    """
    P = np.asarray(W_total, dtype=float) @ np.asarray(A_true, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionMismatch(f"W_total . A_true must be square, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise SingularMatrix("W_total . A_true is not finite")
    k = P.shape[0]
    if k < 2:
        return 0.0
    absP = np.abs(P)
    if (absP.max(axis=1) == 0).any() or (absP.max(axis=0) == 0).any():
        raise SingularMatrix("W_total . A_true has an all-zero row or column")
    rows = (absP.sum(axis=1) / absP.max(axis=1) - 1.0).sum()
    cols = (absP.sum(axis=0) / absP.max(axis=0) - 1.0).sum()
    norm = 2.0 * k * (k - 1)
    return float(0.5 * (rows / norm + cols / norm))
