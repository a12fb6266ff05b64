import numpy as np
import pytest

from privmass.evaluation import (
    ExtractorNotFoundError,
    FeatureExtractor,
    SubsetProtocolError,
    aggregate_seeds,
    fid,
    frd,
    get_extractor,
    paired_subset_protocol,
    register_extractor,
    sample_per_patient,
)
from privmass.fixtures import fixture_patches, fixture_synthetic
from privmass.frechet import fit_gaussian, frechet_distance
from privmass.radiomics import feature_matrix


@pytest.fixture(scope="module")
def sets():
    return {
        "real": fixture_patches(10, seed=0),
        "other": fixture_patches(10, seed=5, id_prefix="FXQ"),
        "syn": fixture_synthetic(10, 10, seed=2),
    }


class TestFid:
    def test_identical_sets_zero(self, sets):
        report = fid(sets["real"], list(sets["real"]))
        assert report.value == pytest.approx(0.0, abs=1e-6)

    def test_shuffled_set_zero(self, sets):
        shuffled = [sets["real"][i] for i in np.random.default_rng(1).permutation(len(sets["real"]))]
        assert fid(sets["real"], shuffled).value == pytest.approx(0.0, abs=1e-6)

    def test_different_sets_positive(self, sets):
        assert fid(sets["real"], sets["other"]).value > 1e-3

    def test_deterministic(self, sets):
        a = fid(sets["real"], sets["syn"]).value
        b = fid(sets["real"], sets["syn"]).value
        assert a == b

    def test_missing_extractor(self, sets):
        with pytest.raises(ExtractorNotFoundError):
            fid(sets["real"], sets["syn"], "no-such-backend")

    def test_registry_accepts_drop_in(self, sets):
        register_extractor(
            FeatureExtractor(
                "mean-pixel", dim=1, transform=lambda imgs: np.array([[float(np.mean(i))] for i in imgs])
            )
        )
        assert get_extractor("mean-pixel").dim == 1
        report = fid(sets["real"], sets["real"], "mean-pixel")
        assert report.value == pytest.approx(0.0, abs=1e-9)

    def test_empty_set_rejected(self, sets):
        with pytest.raises(ValueError):
            fid([], sets["real"])


class TestFrd:
    def test_identical_sets_zero(self, sets):
        assert frd(sets["real"], list(sets["real"])).value == pytest.approx(0.0, abs=1e-9)

    def test_intensity_shift_detected(self, sets):
        shifted = [
            type(p)(pixels=np.clip(p.pixels * 0.8 + 0.1, 0, 1), label=p.label, provenance="shift")
            for p in sets["real"]
        ]
        assert frd(sets["real"], shifted).value > 0.0

    def test_recomputation_oracle(self, sets):
        report = frd(sets["real"], sets["syn"])
        feats_a = feature_matrix([p.pixels for p in sets["real"]])
        feats_b = feature_matrix([p.pixels for p in sets["syn"]])
        mu, std = feats_a.mean(axis=0), feats_a.std(axis=0)
        keep = std > 0
        za = (feats_a[:, keep] - mu[keep]) / std[keep]
        zb = (feats_b[:, keep] - mu[keep]) / std[keep]
        want = frechet_distance(fit_gaussian(za), fit_gaussian(zb))
        assert report.value == pytest.approx(want, abs=1e-9)

    def test_zero_variance_feature_dropped_with_warning(self):
        constant = [
            fixture_synthetic(1, 0, seed=i)[0] for i in range(4)
        ]
        for p in constant:
            p.pixels = np.full_like(p.pixels, 0.5)
        varied = fixture_synthetic(4, 0, seed=9)
        with pytest.warns(UserWarning, match="zero-variance"):
            report = frd(constant, varied)
        assert np.isfinite(report.value)


class TestSubsetProtocol:
    def test_per_patient_at_most_one(self, sets):
        picked = sample_per_patient(sets["real"], np.random.default_rng(0))
        pids = [p.patient_id for p in picked]
        assert len(pids) == len(set(pids))
        assert len(picked) == 10  # one per patient

    def test_subset_size_too_large(self, sets):
        with pytest.raises(SubsetProtocolError):
            sample_per_patient(sets["real"], np.random.default_rng(0), subset_size=99)
        with pytest.raises(SubsetProtocolError):
            sample_per_patient(sets["syn"], np.random.default_rng(0), subset_size=999)

    def test_same_seed_same_membership(self, sets):
        metric = lambda a, b: fid(a, b, "mean-pixel")  # noqa: E731
        r1 = paired_subset_protocol(sets["real"], sets["other"], metric, seed=4)
        r2 = paired_subset_protocol(sets["real"], sets["other"], metric, seed=4)
        assert r1.protocol["per_subset"] == r2.protocol["per_subset"]

    def test_constant_metric_zero_std(self, sets):
        metric = lambda a, b: fid(a, b).__class__(metric="const", value=0.7)  # noqa: E731
        report = paired_subset_protocol(sets["real"], sets["other"], metric, seed=0)
        assert report.value == pytest.approx(0.7)
        assert report.spread == 0.0

    def test_mean_std_match_hand_aggregation(self, sets):
        report = paired_subset_protocol(sets["real"], sets["other"], fid, seed=1)
        vals = report.protocol["per_subset"]
        assert len(vals) == 3
        assert report.value == pytest.approx(np.mean(vals))
        assert report.spread == pytest.approx(np.std(vals))

    def test_identical_sides_control_is_zero(self, sets):
        report = paired_subset_protocol(
            sets["real"], list(sets["real"]), fid, seed=2, identical_sides=True
        )
        assert report.value == pytest.approx(0.0, abs=1e-6)


class TestAggregateSeeds:
    def test_singleton(self):
        assert aggregate_seeds([0.5]) == (0.5, 0.0)

    def test_pair(self):
        mean, std = aggregate_seeds([0.0, 1.0])
        assert (mean, std) == (0.5, 0.5)

    def test_three_values_population_std(self):
        mean, std = aggregate_seeds([0.777, 0.778, 0.779])
        assert mean == pytest.approx(0.778)
        assert std == pytest.approx(0.000816, abs=2e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_seeds([])
