import json

import numpy as np
import pytest

from egsrom.core import Quantity, TimeSeries
from egsrom.regression import (ROM2_FIELD_TIMES, Curve, Dataset, DatasetError, FitOptions,
                               RomTemplate, Split, constant_curve_dataset, fit_rom, score)
from egsrom.rom import AugmentedTimeFunction, RomKind, RomSpec, TimePolynomial, builtin_rom, \
    eval_rom_curve

TIMES = np.arange(0.0, 121.0)
TRAIN = (-14.0, -14.444, -14.667, -14.889, -15.333)
VALIDATE = (-14.222, -15.111)


def known_spec() -> RomSpec:
    """A smooth, MW-scale ROM-1 table used as a generating model."""
    coeffs = [
        [40.0, -0.5, 4e-3, -1.5e-5, 2e-8],
        [-5.0, 0.05, -3e-4, 1e-6, -1e-9],
        [0.2, -1e-3, 5e-6, 0.0, 0.0],
        [-3e-3, 1e-5, 0.0, 0.0, 0.0],
    ]
    return RomSpec(RomKind.ROM1, [AugmentedTimeFunction(TimePolynomial(c)) for c in coeffs])


def dataset_from(spec, train=TRAIN, validate=VALIDATE, prediction=None) -> Dataset:
    curves = []
    for split, keys in ((Split.TRAIN, train), (Split.VALIDATE, validate)):
        for lk in keys:
            curves.append(Curve(lk, eval_rom_curve(spec, TIMES, 10 ** lk), split,
                                f"{split.value}{lk}"))
    return Dataset(tuple(curves), prediction)


@pytest.mark.parametrize("kind", [RomKind.ROM1, RomKind.ROM3])
def test_exact_fit_recovers_generating_curves(kind):
    spec = known_spec()
    data = dataset_from(spec)
    report = fit_rom(RomTemplate.for_kind(kind), data)
    for c in data.curves:
        fitted = eval_rom_curve(report.spec, c.series.times, c.k_fz).values
        if c.split is Split.TRAIN:
            assert np.max(np.abs(fitted - c.series.values)) <= 1e-6
    for s in report.metrics_for(Split.TRAIN):
        assert abs(s.metrics.r2 - 1.0) <= 1e-9


def test_score_of_generating_spec_is_one_and_zero_spec_is_negative():
    spec = known_spec()
    data = dataset_from(spec)
    assert all(s.metrics.r2 == 1.0 for s in score(spec, data))
    zero = RomSpec(RomKind.ROM1, [AugmentedTimeFunction(TimePolynomial([0.0]))] * 4)
    assert all(s.metrics.r2 < 0.0 for s in score(zero, data))


def test_constant_template_fits_the_mean():
    values = np.array([1.0, 4.0, 2.0, 7.0, 3.5])
    report = fit_rom(RomTemplate.constant(), constant_curve_dataset(values))
    assert report.spec.coeff_functions[0].polynomial.coeffs[0] == pytest.approx(values.mean(),
                                                                                rel=1e-12)


def test_duplicate_curve_keeps_cost_per_sample():
    spec = builtin_rom(1)
    noisy = dataset_from(spec, train=(-14.0, -15.0), validate=())
    rng = np.random.default_rng(5)
    curves = tuple(Curve(c.log10_k, c.series.with_values(
        c.series.values + rng.normal(0, 50.0, len(c.series))), c.split, c.name)
        for c in noisy.curves)
    single = Dataset(curves)
    doubled = Dataset(curves + (curves[0],))
    a = fit_rom(RomTemplate.for_kind(1), Dataset(curves[:1]))
    b = fit_rom(RomTemplate.for_kind(1), Dataset((curves[0], curves[0])))
    assert b.final_cost / b.n_residuals == pytest.approx(a.final_cost / a.n_residuals, rel=1e-6)
    assert len(fit_rom(RomTemplate.for_kind(1), doubled).scores) == len(single.curves) + 1


def test_all_frozen_template_equals_score():
    spec = builtin_rom(3)
    data = dataset_from(known_spec())
    report = fit_rom(RomTemplate.frozen(spec), data)
    assert report.iterations == 0 and report.n_parameters == 0
    assert [s.as_dict() for s in report.scores] == [s.as_dict() for s in score(spec, data)]


def test_underdetermined_fit_is_an_error():
    short = TimeSeries(np.arange(5.0), np.arange(5.0) ** 2)
    data = Dataset((Curve(-15.0, short, Split.TRAIN),))
    with pytest.raises(DatasetError, match="under-determined"):
        fit_rom(RomTemplate.for_kind(3), data)


def test_stride_subsamples_training_rows():
    data = dataset_from(known_spec())
    full = fit_rom(RomTemplate.for_kind(1), data)
    strided = fit_rom(RomTemplate.for_kind(1), data, FitOptions(stride=10))
    assert full.n_residuals == 5 * 121
    assert strided.n_residuals == 5 * 13


def test_rom2_adds_field_samples_when_prediction_present():
    spec = known_spec()
    pred = Curve(-15.11, eval_rom_curve(spec, TIMES, 10 ** -15.11), Split.PREDICT, "field")
    with_pred = dataset_from(spec, prediction=pred)
    report = fit_rom(RomTemplate.for_kind(2), with_pred)
    assert report.n_residuals == 5 * 121 + len(ROM2_FIELD_TIMES)
    assert report.metrics_for(Split.PREDICT)[0].name == "field"
    # ROM-3 templates ignore the field samples unless asked.
    assert fit_rom(RomTemplate.for_kind(3), with_pred).n_residuals == 5 * 121


def test_template_parameter_round_trip():
    tpl = RomTemplate.for_kind(2)
    assert tpl.n_free == 4 * 9 + 4 + 4 + 29
    theta = np.arange(tpl.n_free, dtype=float)
    spec = tpl.with_parameters(theta)
    back = RomTemplate(spec, tpl.free_poly, tpl.free_exp, tpl.free_sin, tpl.free_bumps)
    assert np.array_equal(back.parameter_vector(), theta)
    assert [b.t_center for b in spec.bumps] == [b.t_center for b in builtin_rom(2).bumps]


def test_design_matrix_matches_evaluation():
    tpl = RomTemplate.for_kind(2)
    rng = np.random.default_rng(2)
    theta = rng.normal(size=tpl.n_free) * 1e-3
    spec = tpl.with_parameters(theta)
    cols, fixed = tpl.design(TIMES, -14.5)
    np.testing.assert_allclose(cols @ theta + fixed,
                               eval_rom_curve(spec, TIMES, 10 ** -14.5).values,
                               rtol=1e-9, atol=1e-9)


def test_dataset_validation():
    ts = TimeSeries([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(DatasetError, match="training"):
        Dataset((Curve(-15.0, ts, Split.VALIDATE),))
    with pytest.raises(DatasetError, match="outside"):
        Dataset((Curve(-9.0, ts, Split.TRAIN),))
    with pytest.raises(DatasetError, match="prediction"):
        Dataset((Curve(-15.0, ts, Split.TRAIN), Curve(-15.0, ts, Split.PREDICT)))


def test_manifest_round_trip(tmp_path):
    spec = known_spec()
    pred = Curve(-15.11, eval_rom_curve(spec, TIMES, 10 ** -15.11), Split.PREDICT, "field")
    data = dataset_from(spec, prediction=pred)
    manifest = data.save(tmp_path)
    doc = json.loads(manifest.read_text())
    assert {e["split"] for e in doc["curves"]} == {"train", "validate"}
    back = Dataset.load(manifest)
    assert [c.log10_k for c in back.curves] == [c.log10_k for c in data.curves]
    assert np.array_equal(back.prediction.series.values, pred.series.values)
    with pytest.raises(DatasetError):
        Dataset.load(tmp_path / "missing.json")


def test_fit_report_outputs():
    report = fit_rom(RomTemplate.for_kind(1), dataset_from(known_spec()))
    doc = report.to_json_dict()
    assert set(doc) == {"rom", "scores", "diagnostics"}
    assert doc["diagnostics"]["converged"] in (True, False) and doc["diagnostics"]["reason"]
    assert len(doc["scores"]) == 7
    assert RomSpec.from_json_dict(doc["rom"]) == report.spec
    assert report.table().splitlines()[0].split()[:3] == ["curve", "split", "log10"]


def test_fit_is_deterministic():
    data = dataset_from(known_spec())
    a = fit_rom(RomTemplate.for_kind(3), data).to_json_dict()
    b = fit_rom(RomTemplate.for_kind(3), data).to_json_dict()
    assert json.dumps(a) == json.dumps(b)


# Bundled surrogate data: simulator curves at the published log-permeability split.

FITTED_ROM3_R2 = {
    "train_logk-14.000": 0.956001, "train_logk-14.444": 0.946424,
    "train_logk-14.667": 0.937348, "train_logk-14.889": 0.920969,
    "train_logk-15.333": 0.836114, "validate_logk-14.222": 0.943461,
    "validate_logk-15.111": 0.886659, "synthetic_field": 0.821907,
}


@pytest.fixture(scope="module")
def bundled():
    from egsrom.cli import bundled_dataset_path
    return Dataset.load(bundled_dataset_path())


def test_bundled_split_matches_published_lists(bundled):
    assert [c.log10_k for c in bundled.by_split(Split.TRAIN)] == list(TRAIN)
    assert [c.log10_k for c in bundled.by_split(Split.VALIDATE)] == list(VALIDATE)
    assert bundled.prediction is not None


def test_builtin_score_matches_independent_r2(bundled):
    # The printed tables are rounded to 4 significant figures, so against
    # physical curves they score hugely negative R2; check the number itself.
    import mpmath
    import rom_oracle
    c = bundled.by_split(Split.TRAIN)[0]
    t, y = c.series.times[::6], c.series.values[::6]
    with mpmath.workdps(40):
        pred = [rom_oracle.rom_power(3, ti, c.k_fz) for ti in t]
        mean = mpmath.fsum(mpmath.mpf(v) for v in y) / len(y)
        ss_res = mpmath.fsum((mpmath.mpf(v) - p) ** 2 for v, p in zip(y, pred))
        ss_tot = mpmath.fsum((mpmath.mpf(v) - mean) ** 2 for v in y)
        expected = float(1 - ss_res / ss_tot)
    sub = Dataset((Curve(c.log10_k, TimeSeries(t, y), Split.TRAIN, c.name),))
    got = score(builtin_rom(3), sub)[0].metrics.r2
    assert got == pytest.approx(expected, rel=1e-9)
    assert got < -1e9


def test_rom3_fit_on_bundled_curves(bundled):
    tpl = RomTemplate.for_kind(3)
    report = fit_rom(tpl, bundled)
    assert report.converged
    # Independent optimum: column-scaled SVD least squares on the same rows.
    rows = [tpl.design(c.series.times, c.log10_k) + (c.series.values,)
            for c in bundled.by_split(Split.TRAIN)]
    A = np.vstack([r[0] for r in rows])
    b = np.concatenate([y - fixed for _, fixed, y in rows])
    scale = np.linalg.norm(A, axis=0)
    theta = np.linalg.lstsq(A / scale, b, rcond=None)[0] / scale
    best = 0.5 * float(np.sum((A @ theta - b) ** 2))
    assert report.final_cost == pytest.approx(best, rel=1e-6)
    got = {s.name: s.metrics.r2 for s in report.scores}
    assert got == pytest.approx(FITTED_ROM3_R2, abs=2e-6)
    assert all(s.metrics.r2 >= 0.80 for s in report.metrics_for(Split.TRAIN))
    assert all(s.metrics.r2 >= 0.75 for s in report.metrics_for(Split.VALIDATE))
