//! Property tests for the core invariants.

use fodsr::model::windows::{partition, reverse, WindowGrid};
use fodsr::patch::{sample_patch, tissue_fraction, PatchSpec};
use fodsr::sh::{acc_voxel, ShCoeffs, N_COEFFS};
use fodsr::volume::TissueFractions;
use proptest::prelude::*;

fn coeff_vec() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, N_COEFFS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn acc_is_symmetric(u in coeff_vec(), v in coeff_vec()) {
        let u = ShCoeffs::from_slice(&u).unwrap();
        let v = ShCoeffs::from_slice(&v).unwrap();
        let ab = acc_voxel(&u, &v);
        let ba = acc_voxel(&v, &u);
        match (ab, ba) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-14),
            (None, None) => {}
            other => prop_assert!(false, "asymmetric definedness: {other:?}"),
        }
    }

    #[test]
    fn acc_scale_and_dc_invariant(
        u in coeff_vec(),
        v in coeff_vec(),
        alpha in prop_oneof![-4.0f64..-0.1, 0.1f64..4.0],
        beta in prop_oneof![-4.0f64..-0.1, 0.1f64..4.0],
        dc in -10.0f64..10.0,
    ) {
        let u = ShCoeffs::from_slice(&u).unwrap();
        let v = ShCoeffs::from_slice(&v).unwrap();
        if let Some(base) = acc_voxel(&u, &v) {
            // acc(αu, βv) = sign(αβ)·acc(u,v)
            let scaled = acc_voxel(&u.scale(alpha), &v.scale(beta)).unwrap();
            let expect = base * (alpha * beta).signum();
            prop_assert!((scaled - expect).abs() < 1e-9,
                "scale invariance: {scaled} vs {expect}");
            // DC shift never matters
            let mut shifted = u;
            shifted.values_mut()[0] += dc;
            let with_dc = acc_voxel(&shifted, &v).unwrap();
            prop_assert!((with_dc - base).abs() < 1e-14);
        }
    }

    #[test]
    fn acc_self_is_one(u in coeff_vec()) {
        let u = ShCoeffs::from_slice(&u).unwrap();
        if let Some(a) = acc_voxel(&u, &u) {
            prop_assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_partition_reverse_bijection(
        gd in 1usize..4, gh in 1usize..4, gw in 1usize..4,
        wd in 1usize..4, wh in 1usize..4, ww in 1usize..4,
        c in 1usize..5,
        sd in 0usize..4, sh in 0usize..4, sw in 0usize..4,
    ) {
        let dims = [gd * wd, gh * wh, gw * ww];
        let grid = WindowGrid::new(dims, c, [wd, wh, ww], [sd, sh, sw]).unwrap();
        let x: Vec<f64> = (0..grid.n_values()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut w = vec![0.0; x.len()];
        let mut back = vec![0.0; x.len()];
        partition(&grid, &x, &mut w);
        reverse(&grid, &w, &mut back);
        prop_assert_eq!(back, x);
    }

    #[test]
    fn tissue_fraction_monotone_under_added_tissue(
        seed_voxels in proptest::collection::vec((0usize..8, 0usize..8, 0usize..8), 1..30),
        extra in (0usize..8, 0usize..8, 0usize..8),
    ) {
        let mut fr = TissueFractions::zeros([8, 8, 8]);
        for (x, y, z) in &seed_voxels {
            let i = fr.index(*x, *y, *z);
            fr.wm[i] = 1.0;
        }
        let spec = PatchSpec::new([0, 0, 0], [8, 8, 8]);
        let before = tissue_fraction(&fr, &spec).unwrap();
        let i = fr.index(extra.0, extra.1, extra.2);
        fr.wm[i] = 1.0;
        let after = tissue_fraction(&fr, &spec).unwrap();
        prop_assert!(after >= before);
    }
}

/// Rejection sampling covers every feasible origin roughly uniformly:
/// chi-squared over 10k draws on a fully-tissue volume, p > 0.001.
#[test]
fn sample_patch_covers_origins_uniformly() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    let dims = [6, 6, 6];
    let mut fr = TissueFractions::zeros(dims);
    for v in fr.wm.iter_mut() {
        *v = 1.0;
    }
    let size = [3, 3, 3];
    let cells = 4 * 4 * 4; // (6-3+1)³ possible origins
    let draws = 10_000usize;
    let mut counts = vec![0usize; cells];
    for seed in 0..draws {
        let spec = sample_patch(&fr, size, 0.2, seed as u64, 100).unwrap();
        let cell = spec.origin[0] * 16 + spec.origin[1] * 4 + spec.origin[2];
        counts[cell] += 1;
    }
    let expected = draws as f64 / cells as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((cells - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(chi2);
    assert!(p > 0.001, "chi2 = {chi2:.1}, p = {p:.5}");
    assert!(counts.iter().all(|&c| c > 0), "some origin never sampled");
}
