"""Detection metrics against brute-force oracles, plus the KLD estimator."""

import numpy as np
import pytest

from flowtopo import autodiff as ad
from flowtopo.bases import ClassPrior, make_base
from flowtopo.errors import InvalidInputError
from flowtopo.flows import make_flow
from flowtopo.metrics import (MetricReport, auroc, estimate_kld, ood_scores,
                              reports_to_csv, tpr_at_fpr)
from flowtopo.model import FlowModel
from flowtopo.rng import RngStream

STD2 = 1.8378770664093453


def _auroc_brute(sid, sood):
    total = 0.0
    for a in sid:
        for b in sood:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(sid) * len(sood))


def _tpr_brute(sid, sood, level):
    sid = np.asarray(sid, dtype=float)
    sood = np.asarray(sood, dtype=float)
    best = None
    for cand in np.sort(np.unique(np.concatenate([sid, sood])))[::-1]:
        if np.mean(sood > cand) <= level + 1e-12:
            best = cand  # keep lowering while the OOD pass rate stays legal
        else:
            break
    if best is None:
        return 1.0 if np.mean(sood > sood.min()) <= level else 0.0
    return float(np.mean(sid > best))


def test_auroc_pairwise_oracle():
    assert auroc([2.0, 3.0], [1.0, 2.5]) == 0.75


def test_auroc_trivial_cases():
    assert auroc([5.0, 6.0], [1.0, 2.0]) == 1.0
    assert auroc([1.0, 2.0], [5.0, 6.0]) == 0.0
    assert auroc([3.0, 3.0, 3.0], [3.0, 3.0]) == 0.5


def test_auroc_matches_brute_force():
    rng = RngStream(0, 1)
    for trial in range(200):
        r = rng.child(trial)
        n_id = int(r.integers(1, 21, 1)[0])
        n_ood = int(r.integers(1, 21, 1)[0])
        # half-integer lattice forces plenty of exact ties
        sid = r.integers(0, 8, n_id) / 2.0
        sood = r.integers(0, 8, n_ood) / 2.0
        assert auroc(sid, sood) == _auroc_brute(sid, sood)


def test_tpr_at_fpr_threshold_oracle():
    sid = [1.0, 2.0, 3.0, 4.0]
    sood = [0.0, 1.5, 2.5, 3.5]
    # floor(0.2 * 4) = 0 admissible false positives: threshold just above 3.5
    assert tpr_at_fpr(sid, sood, 0.20) == 0.25


def test_tpr_at_fpr_trivial_cases():
    sid = [10.0, 11.0, 12.0]
    sood = [1.0, 2.0, 3.0]
    for level in (0.05, 0.10, 0.20):
        assert tpr_at_fpr(sid, sood, level) == 1.0
    same = [1.0, 2.0, 3.0, 4.0]
    assert tpr_at_fpr(same, same, 0.10) == 0.0


def test_tpr_matches_brute_force():
    rng = RngStream(1, 1)
    for trial in range(200):
        r = rng.child(trial)
        n_id = int(r.integers(1, 21, 1)[0])
        n_ood = int(r.integers(1, 21, 1)[0])
        sid = r.integers(0, 8, n_id) / 2.0
        sood = r.integers(0, 8, n_ood) / 2.0
        for level in (0.05, 0.10, 0.20):
            assert tpr_at_fpr(sid, sood, level) == _tpr_brute(sid, sood, level)


def test_metric_input_validation():
    with pytest.raises(InvalidInputError):
        auroc([], [1.0])
    with pytest.raises(InvalidInputError):
        auroc([1.0], [])
    with pytest.raises(InvalidInputError):
        auroc([np.nan], [1.0])
    with pytest.raises(InvalidInputError):
        tpr_at_fpr([], [1.0], 0.1)
    with pytest.raises(InvalidInputError):
        tpr_at_fpr([1.0], [1.0], 0.0)
    with pytest.raises(InvalidInputError):
        tpr_at_fpr([1.0], [1.0], 1.0)


def _identity_model():
    flow = make_flow("realnvp", 2, 2, (6,), RngStream(9, 2))
    base = make_base("gaussian", 2, 1)
    return FlowModel(flow, base, ClassPrior.uniform(1))


def test_ood_scores_identity_model():
    model = _identity_model()
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    scores = ood_scores(model, pts)
    assert scores[0] == pytest.approx(-STD2, abs=1e-12)
    assert np.all(np.diff(scores) < 0.0)  # radially decreasing


class _GaussianTask:
    """Standard-normal single-class stand-in with exact densities."""

    n_classes = 1

    def sample(self, n, rng):
        return rng.standard_normal((n, 2)), np.zeros(n, dtype=int)

    def logpdf(self, u, y):
        u = np.asarray(u)
        return -0.5 * (u * u).sum(axis=1) - STD2

    def class_logprob(self, y):
        return np.zeros(np.asarray(y).shape)

    def logpdf_joint(self, u, y):
        return self.logpdf(u, y) + self.class_logprob(y)


def test_estimate_kld_closed_form_gaussian():
    # base N((1,0), I) against data N(0, I): KLD = ||mu||^2 / 2 = 0.5
    flow = make_flow("realnvp", 2, 2, (6,), RngStream(10, 2))
    base = make_base("mog", 2, 1)
    base.means.data = np.array([[1.0, 0.0]])
    model = FlowModel(flow, base, ClassPrior.uniform(1))
    kld, se = estimate_kld(model, _GaussianTask(), 100_000, RngStream(11, 4))
    assert kld == pytest.approx(0.5, abs=0.02)
    assert 0.002 < se < 0.005  # per-sample spread is mu.z ~ N(0, 1)


def test_estimate_kld_self_is_zero():
    task = _GaussianTask()

    class TaskAsModel:
        prior = ClassPrior.uniform(1)

        def logprob(self, u, y=None):
            return ad.Tensor(task.logpdf(u, 0))

    kld, se = estimate_kld(TaskAsModel(), task, 2000, RngStream(12, 4))
    assert kld == 0.0
    assert se == 0.0


def test_estimate_kld_requires_enough_samples():
    with pytest.raises(InvalidInputError):
        estimate_kld(_identity_model(), _GaussianTask(), 999, RngStream(0, 4))


def test_estimate_kld_deterministic():
    model = _identity_model()
    a = estimate_kld(model, _GaussianTask(), 2000, RngStream(13, 4))
    b = estimate_kld(model, _GaussianTask(), 2000, RngStream(13, 4))
    assert a == b


def test_metric_report_csv():
    rep = MetricReport(dataset="two_moons", flow="realnvp", base="crsb",
                       objective="ib", seed=3, kld=0.123456789012,
                       kld_se=0.001, auroc=0.987654321987, tpr05=0.5,
                       tpr10=0.75, tpr20=1.0)
    text = reports_to_csv([rep])
    lines = text.strip().split("\n")
    assert lines[0] == MetricReport.CSV_HEADER
    cells = lines[1].split(",")
    assert cells[:5] == ["two_moons", "realnvp", "crsb", "ib", "3"]
    assert cells[5] == "0.123456789"
    assert cells[7] == "0.987654322"
    assert cells[10] == "1"


def test_metric_report_rejects_out_of_range():
    with pytest.raises(InvalidInputError):
        MetricReport(dataset="d", flow="f", base="b", objective="o", seed=0,
                     kld=0.0, kld_se=0.0, auroc=1.5, tpr05=0.0, tpr10=0.0,
                     tpr20=0.0)
