import csv

import numpy as np
import pytest

from conftest import SMALL_MC_SETS, SMALL_SEED
from resdiag.dataset import (
    MANIFEST_COLUMNS,
    _evaluate_proposal,
    build_balanced_dataset,
    proposal_streams,
    read_manifest,
)
from resdiag.dgp import N_BUCKETS, bucket_bounds, bucket_of, propose_spec, simulate_dgp
from resdiag.errors import BucketTimeout
from resdiag.raster import rasterize
from resdiag.scagnostics import compute_aux


class TestBalancedDataset:
    def test_one_per_bucket(self, small_examples):
        assert len(small_examples) == 50
        counts = np.bincount([ex.bucket for ex in small_examples], minlength=N_BUCKETS + 1)[1:]
        np.testing.assert_array_equal(counts, 1)

    def test_targets_inside_buckets(self, small_examples):
        for ex in small_examples:
            lo, hi = bucket_bounds(ex.bucket)
            assert lo <= ex.target < hi
            assert ex.bucket == bucket_of(ex.target)

    def test_ordered_by_proposal(self, small_examples):
        idx = [ex.proposal_index for ex in small_examples]
        assert idx == sorted(idx) and len(set(idx)) == 50

    def test_example_reproducible_from_its_stream(self, small_examples):
        for ex in small_examples[::10]:
            scen_rng, label_rng = proposal_streams(SMALL_SEED, ex.proposal_index)
            spec = propose_spec(scen_rng)
            assert spec == ex.spec
            scen = simulate_dgp(spec, scen_rng, label_m=SMALL_MC_SETS, label_rng=label_rng)
            assert scen.label_d.d == ex.target
            np.testing.assert_array_equal(rasterize(scen.residuals, scen.fitted).pixels, ex.image.pixels)
            assert compute_aux(scen.residuals, scen.fitted) == ex.aux

    def test_proposals_are_pure(self):
        a = _evaluate_proposal((5, 17, 50))
        b = _evaluate_proposal((5, 17, 50))
        assert a[1] == b[1] and a[2] == b[2]
        np.testing.assert_array_equal(a[4], b[4])
        assert _evaluate_proposal((5, 18, 50))[1] != a[1]

    def test_methods_recorded(self, small_examples):
        for ex in small_examples:
            assert ex.method == ("closed-form" if ex.spec.dist_e == "normal" else "kde-mc")

    def test_timeout(self):
        with pytest.raises(BucketTimeout, match="unfilled"):
            build_balanced_dataset(50, m=20, seed=0, max_proposals=30)

    @pytest.mark.parametrize("total", [0, 49, 75, -50])
    def test_bad_total(self, total):
        with pytest.raises(ValueError):
            build_balanced_dataset(total)


class TestManifest:
    def test_columns(self, small_dataset_dir):
        with open(small_dataset_dir / "manifest.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert tuple(header) == MANIFEST_COLUMNS

    def test_round_trip(self, small_examples, small_dataset_dir):
        back = read_manifest(small_dataset_dir / "manifest.csv")
        assert len(back) == len(small_examples)
        for a, b in zip(small_examples, back):
            assert a.target == b.target
            assert a.spec == b.spec
            assert a.aux == b.aux
            assert a.bucket == b.bucket and a.method == b.method
            np.testing.assert_array_equal(np.round(a.image.pixels * 255) / 255, b.image.pixels)

    def test_images_exist(self, small_dataset_dir):
        files = sorted((small_dataset_dir / "images").glob("*.pgm"))
        assert len(files) == 50
        assert files[0].read_bytes().startswith(b"P5\n32 32\n255\n")

    def test_missing_column(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("id,target_d\n0,1.0\n")
        with pytest.raises(ValueError, match="lacks columns"):
            read_manifest(path)
