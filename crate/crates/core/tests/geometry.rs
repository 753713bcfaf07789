mod common;

use common::{dense_operator, random_motion, random_volume};
use lrtv4d_core::geometry::{
    adjoint_project, compose_grid_positions, forward_project, transform_point, BlurSpec, ForwardModel,
};
use lrtv4d_core::{AcquisitionGeometry, MotionTrajectory, RigidTransform, Volume4D};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_geometry() -> AcquisitionGeometry {
    AcquisitionGeometry::new([8, 8, 4], [1, 1, 2], 2.0, 3.0).unwrap()
}

#[test]
fn forward_and_adjoint_match_dense_matrix() {
    let geom = small_geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let motion = random_motion(&geom, 2, 20.0, 3.0, &mut rng);
    let x = random_volume([8, 8, 4, 2], &mut rng);
    let lr = geom.lr_dims();
    let y = random_volume([lr[0], lr[1], lr[2], 2], &mut rng);
    let ax = forward_project(&x, &geom, &motion).unwrap();
    let aty = adjoint_project(&y, &geom, &motion).unwrap();
    let n_lr: usize = lr.iter().product();
    let n_hr = 8 * 8 * 4;
    for n in 0..2 {
        let m = dense_operator(&geom, &motion, n);
        let xs = x.volume(n);
        for (row, got) in m.iter().zip(ax.volume(n)) {
            let want: f64 = row.iter().zip(xs).map(|(a, b)| a * b).sum();
            assert!((want - got).abs() < 1e-10, "forward {want} vs {got}");
        }
        let ys = y.volume(n);
        for col in 0..n_hr {
            let want: f64 = (0..n_lr).map(|r| m[r][col] * ys[r]).sum();
            let got = aty.volume(n)[col];
            assert!((want - got).abs() < 1e-10, "adjoint {want} vs {got}");
        }
    }
}

#[test]
fn impulse_moves_against_translation() {
    let geom = AcquisitionGeometry::new([8, 8, 4], [1, 1, 1], 2.0, 2.0)
        .unwrap()
        .with_blur(BlurSpec::none())
        .unwrap();
    let motion = MotionTrajectory::from_transforms(1, 4, vec![RigidTransform::translation([4.0, 0.0, 0.0]); 4]).unwrap();
    let mut x = Volume4D::zeros([8, 8, 4, 1]).unwrap();
    x.set(5, 3, 2, 0, 1.0);
    let t = forward_project(&x, &geom, &motion).unwrap();
    let (argmax, _) = t
        .data()
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    assert_eq!(argmax, t.index(3, 3, 2, 0));
    assert_eq!(t.get(3, 3, 2, 0), 1.0);

    let m = dense_operator(&geom, &motion, 0);
    for (row, got) in m.iter().zip(t.data()) {
        let want: f64 = row.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((want - got).abs() < 1e-12);
    }
}

#[test]
fn adjoint_identity_over_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let down = [1, 1, rng.random_range(1..=2)];
        let geom = AcquisitionGeometry::new([12, 12, 6], down, rng.random_range(1.0..3.0), rng.random_range(2.0..4.0)).unwrap();
        let motion = random_motion(&geom, 3, 30.0, 10.0, &mut rng);
        let x = random_volume([12, 12, 6, 3], &mut rng);
        let lr = geom.lr_dims();
        let y = random_volume([lr[0], lr[1], lr[2], 3], &mut rng);
        let lhs = forward_project(&x, &geom, &motion).unwrap().dot(&y);
        let rhs = x.dot(&adjoint_project(&y, &geom, &motion).unwrap());
        assert!((lhs - rhs).abs() / lhs.abs().max(rhs.abs()) < 1e-6, "{lhs} vs {rhs}");
    }
}

#[test]
fn operator_is_linear() {
    let geom = small_geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let motion = random_motion(&geom, 2, 15.0, 4.0, &mut rng);
    let x = random_volume([8, 8, 4, 2], &mut rng);
    let y = random_volume([8, 8, 4, 2], &mut rng);
    let (a, b) = (1.7, -0.6);
    let mut combo = x.scaled(a);
    combo.axpy(b, &y);
    let lhs = forward_project(&combo, &geom, &motion).unwrap();
    let mut rhs = forward_project(&x, &geom, &motion).unwrap().scaled(a);
    rhs.axpy(b, &forward_project(&y, &geom, &motion).unwrap());
    for (p, q) in lhs.data().iter().zip(rhs.data()) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn linear_ramp_is_reproduced_through_motion() {
    // a ramp is exactly representable by trilinear sampling, so pulling it
    // through a rigid map must equal the ramp evaluated at the mapped point
    let geom = AcquisitionGeometry::new([16, 16, 8], [1, 1, 1], 2.0, 2.0)
        .unwrap()
        .with_blur(BlurSpec::none())
        .unwrap();
    let tr = RigidTransform::new([2.0, -3.0, 5.0], [0.7, -0.4, 0.3]).unwrap();
    let motion = MotionTrajectory::from_transforms(1, 8, vec![tr; 8]).unwrap();
    let ramp = |p: [f64; 3]| 0.3 * p[0] - 0.2 * p[1] + 0.1 * p[2] + 1.0;
    let mut x = Volume4D::zeros([16, 16, 8, 1]).unwrap();
    for h in 0..8 {
        for k in 0..16 {
            for b in 0..16 {
                x.set(b, k, h, 0, ramp(geom.hr_to_physical([b as f64, k as f64, h as f64])));
            }
        }
    }
    let t = forward_project(&x, &geom, &motion).unwrap();
    let model = ForwardModel::new(&geom, &motion).unwrap();
    let mut checked = 0;
    for h in 2..6 {
        for k in 3..13 {
            for b in 3..13 {
                let q = transform_point(geom.lr_center_physical([b, k, h]), &tr, geom.center());
                let idx = geom.physical_to_hr(q);
                if idx.iter().zip(geom.hr_dims).all(|(v, d)| *v >= 0.0 && *v <= (d - 1) as f64) {
                    assert!(model.validity_mask()[t.index(b, k, h, 0)]);
                    assert!((t.get(b, k, h, 0) - ramp(q)).abs() < 1e-6);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 300);
}

/// Largest distance from an HR node in the central region to its nearest sample.
fn largest_gap(geom: &AcquisitionGeometry, motion: &MotionTrajectory) -> f64 {
    let t = geom.lr_volume(1, 1.0).unwrap();
    let cloud = compose_grid_positions(&t, geom, motion, 0).unwrap();
    let mut worst: f64 = 0.0;
    for h in 2..10 {
        for k in 12..36 {
            for b in 12..36 {
                let p = geom.hr_to_physical([b as f64, k as f64, h as f64]);
                let d = cloud
                    .positions
                    .iter()
                    .map(|q| (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt();
                worst = worst.max(d);
            }
        }
    }
    worst
}

#[test]
fn rotated_slices_leave_gaps_in_the_cloud() {
    let geom = AcquisitionGeometry::desk();
    let lr = geom.lr_dims();
    let still = largest_gap(&geom, &MotionTrajectory::identity(1, lr[2]));
    assert!((still - 0.25 * geom.slice_thickness).abs() < 1e-9, "{still}");
    let mut transforms = vec![RigidTransform::identity(); lr[2]];
    for h in (0..lr[2]).step_by(2) {
        transforms[h] = RigidTransform::new([30.0, 0.0, 0.0], [0.0; 3]).unwrap();
    }
    let motion = MotionTrajectory::from_transforms(1, lr[2], transforms).unwrap();
    let moved = largest_gap(&geom, &motion);
    assert!(moved > 2.0 * still, "largest gap {moved} vs {still}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_transforms_preserve_distances(
        rot in proptest::array::uniform3(-45.0f64..45.0),
        tr in proptest::array::uniform3(-10.0f64..10.0),
        p in proptest::array::uniform3(-50.0f64..50.0),
        q in proptest::array::uniform3(-50.0f64..50.0),
    ) {
        let t = RigidTransform::new(rot, tr).unwrap();
        let c = [1.0, -2.0, 0.5];
        let (tp, tq) = (transform_point(p, &t, c), transform_point(q, &t, c));
        let d0 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>().sqrt();
        let d1 = (0..3).map(|a| (tp[a] - tq[a]).powi(2)).sum::<f64>().sqrt();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn constant_image_stays_constant(c in -5.0f64..5.0, rot in -8.0f64..8.0) {
        let geom = AcquisitionGeometry::new([12, 12, 12], [1, 1, 2], 2.0, 3.0).unwrap();
        let motion = MotionTrajectory::from_transforms(
            1, 6, vec![RigidTransform::new([0.0, 0.0, rot], [0.5, 0.0, 0.0]).unwrap(); 6]).unwrap();
        let x = Volume4D::from_vec([12, 12, 12, 1], vec![c; 1728]).unwrap();
        let model = ForwardModel::new(&geom, &motion).unwrap();
        let t = model.forward(&x).unwrap();
        // away from the edges every tap of the profile stays inside the FOV
        for h in 2..4 {
            for k in 4..8 {
                for b in 4..8 {
                    prop_assert!((t.get(b, k, h, 0) - c).abs() < 1e-9);
                }
            }
        }
    }
}
