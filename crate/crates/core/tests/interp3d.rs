use lrtv4d_core::interp3d::{
    interpolate_volume, interpolate_volume_with_support, reconstruct_series_3d, GridSpec, MIN_WEIGHT,
};
use lrtv4d_core::{AcquisitionGeometry, InterpMethod, MotionTrajectory, RigidTransform, ScatteredSamples, Volume4D};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(dims: [usize; 3]) -> GridSpec {
    GridSpec {
        dims,
        spacing: [1.0; 3],
        origin: [0.0; 3],
    }
}

fn nodes(g: &GridSpec) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for z in 0..g.dims[2] {
        for y in 0..g.dims[1] {
            for x in 0..g.dims[0] {
                out.push(g.node_position([x, y, z]));
            }
        }
    }
    out
}

#[test]
fn on_grid_samples_are_reproduced() {
    let g = grid([7, 6, 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let positions = nodes(&g);
    let values: Vec<f64> = positions.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
    let s = ScatteredSamples {
        positions,
        values: values.clone(),
        target: g,
    };
    for m in InterpMethod::ALL {
        let r = interpolate_volume(&s, m).unwrap();
        assert!(r.covered.iter().all(|c| *c));
        for (got, want) in r.volume.data.iter().zip(&values) {
            assert!((got - want).abs() < 1e-10, "{m:?}: {got} vs {want}");
        }
    }
}

#[test]
fn linear_method_reproduces_linear_field_from_dense_samples() {
    let g = grid([6, 6, 4]);
    let f = |p: [f64; 3]| 2.0 * p[0] + 3.0 * p[1] - p[2];
    // quarter-voxel lattice extending past the grid so every node sees a symmetric neighbourhood
    let mut positions = Vec::new();
    for z in -6..=18 {
        for y in -6..=26 {
            for x in -6..=26 {
                positions.push([x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25]);
            }
        }
    }
    let values = positions.iter().map(|p| f(*p)).collect();
    let s = ScatteredSamples {
        positions,
        values,
        target: g,
    };
    let r = interpolate_volume(&s, InterpMethod::Linear).unwrap();
    for (i, p) in nodes(&g).into_iter().enumerate() {
        assert!(r.covered[i]);
        assert!((r.volume.data[i] - f(p)).abs() < 1e-6);
    }
}

#[test]
fn coverage_gap_matches_nearest_sample_distance() {
    let g = grid([6, 6, 8]);
    // planes of samples with two missing slices at z = 3, 4
    let mut positions = Vec::new();
    for z in [0usize, 1, 2, 5, 6, 7] {
        for y in 0..6 {
            for x in 0..6 {
                positions.push([x as f64 + 0.3, y as f64 - 0.2, z as f64 + 0.1]);
            }
        }
    }
    let values = vec![1.0; positions.len()];
    let s = ScatteredSamples {
        positions: positions.clone(),
        values,
        target: g,
    };
    let r = interpolate_volume(&s, InterpMethod::Linear).unwrap();
    assert!(r.coverage_fraction() < 1.0);
    for (i, p) in nodes(&g).into_iter().enumerate() {
        let nearest = positions
            .iter()
            .map(|q| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        // a tent weight below MIN_WEIGHT counts as uncovered
        let expect = 1.0 - nearest >= MIN_WEIGHT;
        assert_eq!(r.covered[i], expect, "node {p:?} nearest {nearest}");
    }
}

#[test]
fn identity_motion_series_is_the_input() {
    let geom = AcquisitionGeometry::identity([6, 5, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = (0..6 * 5 * 4 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let t = Volume4D::from_vec([6, 5, 4, 3], data).unwrap();
    let motion = MotionTrajectory::identity(3, 4);
    for m in InterpMethod::ALL {
        let r = reconstruct_series_3d(&t, &motion, &geom, m).unwrap();
        for (a, b) in r.series.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(r.coverage_fraction.iter().all(|c| *c == 1.0));
    }
}

#[test]
fn constant_series_stays_constant_under_motion() {
    let geom = AcquisitionGeometry::desk();
    let lr = geom.lr_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let transforms = (0..2 * lr[2])
        .map(|_| RigidTransform::new([0.0, rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)], [1.0, -2.0, 0.5]).unwrap())
        .collect();
    let motion = MotionTrajectory::from_transforms(2, lr[2], transforms).unwrap();
    let t = Volume4D::from_vec([lr[0], lr[1], lr[2], 2], vec![0.7; lr.iter().product::<usize>() * 2]).unwrap();
    for m in InterpMethod::ALL {
        let r = reconstruct_series_3d(&t, &motion, &geom, m).unwrap();
        for (v, c) in r.series.data().iter().zip(&r.covered) {
            if *c {
                assert!((v - 0.7).abs() < 1e-6, "{m:?}: {v}");
            }
        }
    }
}

#[test]
fn large_rotation_opens_holes() {
    let geom = AcquisitionGeometry::desk();
    let lr = geom.lr_dims();
    let mut transforms = vec![RigidTransform::identity(); 2 * lr[2]];
    for h in 0..lr[2] {
        transforms[lr[2] + h] = RigidTransform::new([30.0, 0.0, 0.0], [0.0; 3]).unwrap();
    }
    let motion = MotionTrajectory::from_transforms(2, lr[2], transforms).unwrap();
    let t = Volume4D::from_vec([lr[0], lr[1], lr[2], 2], vec![1.0; lr.iter().product::<usize>() * 2]).unwrap();
    let r = reconstruct_series_3d(&t, &motion, &geom, InterpMethod::Linear).unwrap();
    assert!(r.coverage_fraction[1] < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_output_stays_within_local_sample_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid([5, 5, 4]);
        let positions: Vec<[f64; 3]> = (0..150)
            .map(|_| [rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5), rng.random_range(-0.5..3.5)])
            .collect();
        let values: Vec<f64> = positions.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = ScatteredSamples { positions: positions.clone(), values: values.clone(), target: g };
        let r = interpolate_volume(&s, InterpMethod::Linear).unwrap();
        for (i, p) in nodes(&g).into_iter().enumerate() {
            if !r.covered[i] {
                continue;
            }
            let local: Vec<f64> = positions
                .iter()
                .zip(&values)
                .filter(|(q, _)| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>() < 1.0)
                .map(|(_, v)| *v)
                .collect();
            let lo = local.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = local.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = r.volume.data[i];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn coverage_grows_with_support(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid([6, 6, 4]);
        let positions: Vec<[f64; 3]> = (0..30)
            .map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..3.0)])
            .collect();
        let s = ScatteredSamples { values: vec![1.0; positions.len()], positions, target: g };
        let small = interpolate_volume_with_support(&s, InterpMethod::Linear, 1.0).unwrap();
        let large = interpolate_volume_with_support(&s, InterpMethod::Linear, 2.0).unwrap();
        for (a, b) in small.covered.iter().zip(&large.covered) {
            prop_assert!(!*a || *b);
        }
    }
}
