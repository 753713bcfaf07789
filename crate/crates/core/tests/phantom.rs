use lrtv4d_core::fc::roi_average;
use lrtv4d_core::geometry::forward_project;
use lrtv4d_core::metrics::temporal_sd;
use lrtv4d_core::phantom::{
    degrade, injected_signal, lr_labels, make_motion, make_phantom, make_phantom_on, DegradationSpec, PhantomSpec,
    RegionBold,
};
use lrtv4d_core::recon::{reconstruct, ReconConfig};
use lrtv4d_core::{AcquisitionGeometry, MotionTrajectory};
use proptest::prelude::*;

fn small_spec() -> PhantomSpec {
    PhantomSpec {
        hr_dims: [16, 16, 8],
        n_timepoints: 12,
        ..Default::default()
    }
}

#[test]
fn zero_amplitudes_give_static_series() {
    let mut spec = small_spec();
    for b in &mut spec.bold {
        b.amplitude = 0.0;
        b.drift = 0.0;
    }
    let (x, _) = make_phantom(&spec).unwrap();
    let (sd, mean) = temporal_sd(&x, None).unwrap();
    assert!(mean < 1e-12);
    assert!(sd.data.iter().all(|v| *v < 1e-12));
}

#[test]
fn phantom_is_seed_deterministic_and_bounded() {
    let spec = small_spec();
    let (a, la) = make_phantom(&spec).unwrap();
    let (b, lb) = make_phantom(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = make_phantom(&PhantomSpec { seed: 5, ..small_spec() }).unwrap();
    assert_ne!(a, c);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn regional_means_carry_the_injected_signal() {
    let spec = small_spec();
    let (x, labels) = make_phantom(&spec).unwrap();
    let ts = roi_average(&x, &labels).unwrap();
    for (r, id) in ts.region_ids.iter().enumerate() {
        let s = &ts.series[r];
        let static_part = s[0] - injected_signal(&spec, *id, 0);
        for (n, v) in s.iter().enumerate() {
            assert!((v - static_part - injected_signal(&spec, *id, n)).abs() < 1e-12);
        }
    }
}

#[test]
fn region_one_spectrum_peaks_at_its_frequency() {
    let n_t = 128;
    let mut spec = PhantomSpec {
        hr_dims: [16, 16, 8],
        n_timepoints: n_t,
        ..Default::default()
    };
    spec.bold[0] = RegionBold {
        amplitude: 0.05,
        frequency_hz: 0.03,
        phase: 0.0,
        drift: 0.0,
    };
    let (x, labels) = make_phantom(&spec).unwrap();
    let ts = roi_average(&x, &labels).unwrap();
    let s = &ts.series[ts.region_ids.iter().position(|r| *r == 1).unwrap()];
    let mean = s.iter().sum::<f64>() / n_t as f64;
    // direct DFT magnitudes of the demeaned series
    let power: Vec<f64> = (0..=n_t / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in s.iter().enumerate() {
                let ph = -std::f64::consts::TAU * (k * n) as f64 / n_t as f64;
                re += (v - mean) * ph.cos();
                im += (v - mean) * ph.sin();
            }
            re * re + im * im
        })
        .collect();
    let peak = (1..power.len()).max_by(|a, b| power[*a].total_cmp(&power[*b])).unwrap();
    let df = 1.0 / (n_t as f64 * spec.tr);
    assert!((peak as f64 * df - 0.03).abs() <= df, "peak at {} Hz", peak as f64 * df);
}

#[test]
fn zero_bounds_give_identity_motion() {
    let geom = AcquisitionGeometry::desk();
    let spec = DegradationSpec {
        max_rotation_deg: 0.0,
        max_translation_mm: 0.0,
        ..Default::default()
    };
    let m = make_motion(&spec, &geom, 10).unwrap();
    assert!(m.transforms().iter().all(|t| t.is_identity()));
}

#[test]
fn motion_respects_bounds_and_step_size() {
    let geom = AcquisitionGeometry::desk();
    let spec = DegradationSpec {
        max_rotation_deg: 30.0,
        max_translation_mm: 8.0,
        burst_probability: 0.3,
        ..Default::default()
    };
    let m = make_motion(&spec, &geom, 40).unwrap();
    for t in m.transforms() {
        assert!(t.rotation_deg.iter().all(|r| r.abs() <= 30.0));
        assert!(t.translation_mm.iter().all(|v| v.abs() <= 8.0));
    }
    assert_eq!(m, make_motion(&spec, &geom, 40).unwrap());

    let calm = DegradationSpec {
        burst_probability: 0.0,
        burst_timepoints: vec![],
        ..Default::default()
    };
    let m = make_motion(&calm, &geom, 40).unwrap();
    // walk in acquisition order: consecutive slices of a volume, then the next volume
    let order = &geom.interleave;
    let mut seq = Vec::new();
    for n in 0..40 {
        for &h in order {
            seq.push(*m.get(n, h));
        }
    }
    for w in seq.windows(2) {
        for a in 0..3 {
            assert!((w[1].rotation_deg[a] - w[0].rotation_deg[a]).abs() <= calm.walk_step_deg + 1e-12);
            assert!((w[1].translation_mm[a] - w[0].translation_mm[a]).abs() <= calm.walk_step_mm + 1e-12);
        }
    }
}

#[test]
fn noise_level_matches_sigma() {
    let geom = AcquisitionGeometry::desk();
    let spec = PhantomSpec::default();
    let (x, _) = make_phantom_on(&spec, &geom).unwrap();
    let deg = DegradationSpec::default();
    let motion = make_motion(&deg, &geom, spec.n_timepoints).unwrap();
    let clean = forward_project(&x, &geom, &motion).unwrap();
    let noisy = degrade(&x, &geom, &motion, 0.01, 3).unwrap();
    assert_eq!(noisy, degrade(&x, &geom, &motion, 0.01, 3).unwrap());
    let n = clean.len();
    assert!(n >= 100_000);
    let r: Vec<f64> = noisy.data().iter().zip(clean.data()).map(|(a, b)| a - b).collect();
    let mean = r.iter().sum::<f64>() / n as f64;
    let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((sd - 0.01).abs() < 0.05 * 0.01, "sd {sd}");
}

#[test]
fn identity_degradation_and_unregularized_recon_return_truth() {
    let spec = small_spec();
    let geom = AcquisitionGeometry::identity(spec.hr_dims);
    let (x, labels) = make_phantom_on(&spec, &geom).unwrap();
    let motion = MotionTrajectory::identity(spec.n_timepoints, spec.hr_dims[2]);
    let t = degrade(&x, &geom, &motion, 0.0, 0).unwrap();
    assert_eq!(t.data(), x.data());
    assert_eq!(lr_labels(&labels, &geom).unwrap(), labels);
    let cfg = ReconConfig {
        lambda_rank: 0.0,
        lambda_tv: 0.0,
        ..Default::default()
    };
    let (y, report) = reconstruct(&t, &geom, &motion, &cfg).unwrap();
    assert!(report.converged);
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn intensities_stay_in_unit_range(seed in any::<u64>()) {
        let (x, labels) = make_phantom(&PhantomSpec { seed, ..small_spec() }).unwrap();
        prop_assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(labels.region_ids().len(), 6);
    }
}
