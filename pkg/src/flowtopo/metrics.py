"""Detection metrics (AUROC, TPR@FPR), OOD scoring, and the KLD estimator."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError


def _scores(x, what):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidInputError(f"{what} scores must be nonempty")
    if not np.isfinite(x).all():
        raise InvalidInputError(f"{what} scores must be finite")
    return x


def _average_ranks(x):
    """1-based ranks, ties averaged within each equal-value group."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    new_group = np.empty(x.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = xs[1:] != xs[:-1]
    group = np.cumsum(new_group) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    avg = ends - 0.5 * (counts - 1)
    ranks = np.empty(x.size)
    ranks[order] = avg[group]
    return ranks


def auroc(scores_id, scores_ood):
    """P(random ID score > random OOD score), ties counted half."""
    sid = _scores(scores_id, "ID")
    sood = _scores(scores_ood, "OOD")
    ranks = _average_ranks(np.concatenate([sid, sood]))
    n_id, n_ood = sid.size, sood.size
    rank_sum = ranks[:n_id].sum()
    return float((rank_sum - 0.5 * n_id * (n_id + 1)) / (n_id * n_ood))


def tpr_at_fpr(scores_id, scores_ood, fpr_level):
    """TPR at the lowest threshold whose OOD pass rate stays <= fpr_level.

    ID is the positive class; a sample passes when its score exceeds the
    threshold, which sits just above the (k+1)-th largest OOD score where
    k = floor(fpr_level * n_ood).
    """
    sid = _scores(scores_id, "ID")
    sood = _scores(scores_ood, "OOD")
    if not 0.0 < fpr_level < 1.0:
        raise InvalidInputError("fpr_level must lie in (0, 1)")
    allowed = int(np.floor(fpr_level * sood.size + 1e-12))
    if allowed >= sood.size:
        return 1.0
    threshold = np.sort(sood)[::-1][allowed]
    return float(np.mean(sid > threshold))


def ood_scores(model, samples, chunk=4096):
    """Per-sample class-marginal log-likelihood under the model."""
    return model.score(np.asarray(samples, dtype=np.float64), chunk=chunk)


def estimate_kld(model, task, n, rng, chunk=4096):
    """MC estimate of KL(task joint || model joint) with its standard error.

    Draws (u, y) from the task and averages log p_task(u, y) - log p_model(u, y),
    where both joints factor as conditional times class prior.
    """
    if n < 1000:
        raise InvalidInputError("KLD estimation needs n >= 1000")
    u, y = task.sample(n, rng)
    gt = task.logpdf_joint(u, y)
    mdl = np.empty(n)
    with ad.no_grad():
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            mdl[lo:hi] = model.logprob(u[lo:hi], y[lo:hi]).data
    mdl = mdl + model.prior.log_probs[y]
    diffs = gt - mdl
    return float(diffs.mean()), float(diffs.std(ddof=1) / np.sqrt(n))


@dataclass
class MetricReport:
    """One evaluated model: density quality plus OOD detection numbers."""

    dataset: str
    flow: str
    base: str
    objective: str
    seed: int
    kld: float
    kld_se: float
    auroc: float
    tpr05: float
    tpr10: float
    tpr20: float

    CSV_HEADER = "dataset,flow,base,objective,seed,kld,kld_se,auroc,tpr05,tpr10,tpr20"

    def __post_init__(self):
        for name in ("auroc", "tpr05", "tpr10", "tpr20"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {v}")

    def to_csv_row(self):
        cells = [self.dataset, self.flow, self.base, self.objective,
                 str(self.seed)]
        for v in (self.kld, self.kld_se, self.auroc, self.tpr05, self.tpr10,
                  self.tpr20):
            cells.append(format(v, ".9g"))
        return ",".join(cells)


def reports_to_csv(reports):
    lines = [MetricReport.CSV_HEADER]
    lines.extend(r.to_csv_row() for r in reports)
    return "\n".join(lines) + "\n"
