import csv
import io
import math

import numpy as np
import pytest

from bls import simbench
from bls.core import FitConfig
from bls.dataio import load_diabetes
from bls.errors import NumericalDegeneracyError
from bls.simbench import (SincSpec, gen_sinc, mse_vs_truth, run_selection_study, run_study, sinc,
                          sinc_inputs, worker_count)

SMALL = SincSpec(n_points=60)


@pytest.fixture(autouse=True)
def serial(monkeypatch):
    monkeypatch.setenv("SBL_THREADS", "1")


def test_sinc_values():
    assert sinc(0.0) == 1.0
    assert abs(sinc(np.pi)) < 1e-15
    assert sinc(np.pi / 2) == pytest.approx(2 / np.pi)


def test_noise_free_draw_is_truth():
    _, y, f = gen_sinc(SincSpec(sigma=0.0))
    np.testing.assert_array_equal(y, f)


def test_mse_example():
    assert mse_vs_truth([1.0, 2.0], [0.0, 0.0]) == 2.5
    with pytest.raises(ValueError):
        mse_vs_truth([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mse_vs_truth([], [])


def test_input_grids():
    x = sinc_inputs(SincSpec())
    assert x.shape == (200, 1) and x[0, 0] == -10 and x[-1, 0] == 10
    x2 = sinc_inputs(SincSpec(dim=2))
    assert x2.shape == (34 * 34, 2)
    assert x2.min() == -5 and x2.max() == pytest.approx(4.9)


def test_two_d_truth_is_additive():
    X, _, f = gen_sinc(SincSpec(dim=2, sigma=0.0))
    np.testing.assert_allclose(f, sinc(X[:, 0]) + sinc(X[:, 1]))


def test_noise_is_seeded():
    a = gen_sinc(SincSpec(seed=3))[1]
    b = gen_sinc(SincSpec(seed=3))[1]
    c = gen_sinc(SincSpec(seed=4))[1]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("kw", [dict(dim=3), dict(sigma=-1.0), dict(n_points=1),
                                dict(dim=2, grid_step=0.0), dict(x_range=(1.0, 1.0))])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SincSpec(**kw)


def test_single_rep_has_zero_sd():
    rep = run_study(["bls"], [0.1], 1, SMALL)
    c = rep.cell("bls", 0.1)
    assert (c.nov_sd, c.mse_sd, c.sigma_hat_sd) == (0.0, 0.0, 0.0)
    assert c.n_reps == 1 and c.n_failed == 0


def test_study_is_deterministic_and_ordered():
    a = run_study(["frvm", "bls"], [0.2, 0.05], 2, SMALL)
    b = run_study(["frvm", "bls"], [0.2, 0.05], 2, SMALL)
    assert a.to_csv() == b.to_csv()
    assert [(c.sigma, c.method) for c in a.cells] == [
        (0.2, "frvm"), (0.2, "bls"), (0.05, "frvm"), (0.05, "bls")]


def test_methods_share_the_draw():
    # identical rules on the same draw must agree exactly
    rep = run_study(["bls", "frvm", "bls"], [0.1], 2, SMALL)
    recs = [r for r in rep.records if r.method == "bls"]
    assert recs[0].mse == recs[1].mse and recs[2].mse == recs[3].mse


def test_parallel_matches_serial(monkeypatch):
    serial_csv = run_study(["bls"], [0.1], 3, SMALL).to_csv()
    monkeypatch.setenv("SBL_THREADS", "2")
    assert run_study(["bls"], [0.1], 3, SMALL).to_csv() == serial_csv


def test_fixed_noise_variant(monkeypatch):
    seen = []
    real = simbench.fit

    def spy(design, y, rule, cfg):
        seen.append((cfg.fix_sigma2, float(np.var(y, ddof=1))))
        return real(design, y, rule, cfg)

    monkeypatch.setattr(simbench, "fit", spy)
    rep = run_study(["bls"], [0.1], 1, SMALL, fixed_sigma2=True)
    fixed, var = seen[0]
    assert fixed == pytest.approx(0.1 * var)
    assert rep.cell("bls", 0.1).sigma_hat_mean == pytest.approx(math.sqrt(fixed))
    assert "sigma_hat" not in rep.to_markdown()


def test_failures_are_counted(monkeypatch):
    real = simbench.fit
    calls = iter(range(100))

    def flaky(design, y, rule, cfg):
        if next(calls) == 1:
            raise NumericalDegeneracyError("forced", index=0)
        return real(design, y, rule, cfg)

    monkeypatch.setattr(simbench, "fit", flaky)
    rep = run_study(["bls"], [0.1], 3, SMALL)
    c = rep.cell("bls", 0.1)
    assert (c.n_reps, c.n_failed) == (2, 1)
    assert np.isfinite(c.mse_mean)
    assert sum(r.error is not None for r in rep.records) == 1


def test_report_formats():
    rep = run_study(["bls", "frvm"], [0.1], 2, SMALL)
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    assert len(rows) == 2 and rows[0]["method"] == "bls"
    assert float(rows[0]["mse_mean"]) == rep.cells[0].mse_mean
    md = rep.to_markdown().splitlines()
    assert md[0].startswith("| sigma") and len(md) == 4


def test_study_argument_checks():
    with pytest.raises(ValueError):
        run_study(["bls"], [0.1], 0)
    with pytest.raises(ValueError):
        run_study(["nope"], [0.1], 1)
    with pytest.raises(ValueError):
        run_study(["bls"], [-0.1], 1)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SBL_THREADS", "4")
    assert worker_count(10) == 4 and worker_count(2) == 2
    monkeypatch.setenv("SBL_THREADS", "junk")
    assert worker_count(10) == 1
    monkeypatch.delenv("SBL_THREADS")
    assert worker_count(1) == 1


def test_selection_study():
    ds = load_diabetes()
    rep = run_selection_study(ds, ["bls", "frvm"], 3, cfg=FitConfig(max_iters=2000))
    assert [c.method for c in rep.cells] == ["bls", "frvm"]
    for c in rep.cells:
        assert c.n_reps == 3 and c.n_failed == 0
        assert 1 <= c.n_selected_mean <= 10
        # test error on the original response scale, near the response variance
        assert 2000 < c.mse_mean < 6000
    again = run_selection_study(ds, ["bls", "frvm"], 3, cfg=FitConfig(max_iters=2000))
    assert again.to_csv() == rep.to_csv()
    assert "of 10" in rep.to_markdown()


def test_selection_argument_checks():
    ds = load_diabetes()
    with pytest.raises(ValueError):
        run_selection_study(ds, ["bls"], 1, train_frac=1.0)
    with pytest.raises(ValueError):
        run_selection_study(ds, ["bls"], 0)
