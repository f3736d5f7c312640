use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use biopsy_core::planner::{greedy_plan, protocol_plan};
use biopsy_core::protocol::{DEFAULT_CORE_LENGTH_MM, DEFAULT_PIVOT};
use biopsy_core::sim::{calibrate_sigma, expected_zone_error, simulate_trajectory, NoiseLevels};
use biopsy_core::{
    default_gland, default_protocol, validate_protocol, zone_error, CoverageConfig, PlanConfig,
    RigidTransform, Vec3,
};

fn norm_sample(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    sigma * (x * x + y * y + z * z).sqrt()
}

/// Plain Monte Carlo of E[max(0, |X| - r)], X ~ N(0, sigma^2 I).
fn mc_zone_error(sigma: f64, r: f64, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (norm_sample(&mut rng, sigma) - r).max(0.0)).sum::<f64>() / n as f64
}

#[test]
fn closed_form_zone_error_matches_sampling() {
    for (sigma, r) in [(5.0, 3.5), (2.0, 3.5), (8.0, 1.0), (3.0, 0.0)] {
        let mc = mc_zone_error(sigma, r, 400_000, 7);
        let cf = expected_zone_error(sigma, r);
        assert!((mc - cf).abs() < 0.02 * sigma, "sigma {sigma} r {r}: {mc} vs {cf}");
    }
    // r = 0 reduces to the Maxwell mean 2 sigma sqrt(2/pi).
    let maxwell = 2.0 * 3.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((expected_zone_error(3.0, 0.0) - maxwell).abs() < 1e-12);
}

#[test]
fn calibrated_sigma_reproduces_mean_error_by_sampling() {
    for target in [6.79, 5.1] {
        let sigma = calibrate_sigma(target, 3.5).unwrap();
        let mc = mc_zone_error(sigma, 3.5, 1_000_000, 11);
        assert!((mc - target).abs() < 0.05, "target {target}: sigma {sigma}, mc {mc}");
    }
}

#[test]
fn frozen_calibration_values() {
    assert!((calibrate_sigma(6.79, 3.5).unwrap() - 6.4261).abs() < 1e-3);
    assert!((calibrate_sigma(5.1, 3.5).unwrap() - 5.3518).abs() < 1e-3);
}

#[test]
fn simulated_tip_errors_match_closed_form() {
    let gland = default_gland();
    let protocol = default_protocol(&gland, DEFAULT_PIVOT, DEFAULT_CORE_LENGTH_MM).unwrap();
    let noise = NoiseLevels { sigma_tip: 5.0, sigma_entry: 5.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = &protocol.sectors[4];
    let n = 10_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let t = simulate_trajectory(&noise, spec, protocol.pivot, protocol.core_length_mm, &mut rng).unwrap();
        assert!((t.segment.length() - protocol.core_length_mm).abs() < 1e-9);
        sum += zone_error(t.tip(), &spec.target_zone);
    }
    let mean = sum / n as f64;
    let expected = expected_zone_error(5.0, 3.5);
    assert!((mean - expected).abs() < 0.15, "{mean} vs {expected}");
}

#[test]
fn default_protocol_is_valid_and_stays_valid_when_moved() {
    let gland = default_gland();
    let p = default_protocol(&gland, DEFAULT_PIVOT, DEFAULT_CORE_LENGTH_MM).unwrap();
    assert!(validate_protocol(&p).is_empty());
    assert_eq!(p.sectors.len(), 12);
    let t = RigidTransform::from_axis_angle(Vec3::new(0.0, 0.6, 0.8), 0.7, Vec3::new(12.0, -4.0, 30.0));
    let moved = p.transformed(&t);
    assert!(validate_protocol(&moved).is_empty());
    // Left and right sectors mirror across x = 0.
    for s in &p.sectors {
        let m = p.sector(s.sector.mirrored()).unwrap();
        let c = s.target_zone.center;
        let mc = m.target_zone.center;
        assert!((c.x + mc.x).abs() < 1e-9 && (c.y - mc.y).abs() < 1e-9 && (c.z - mc.z).abs() < 1e-9);
    }
}

#[test]
fn greedy_plan_gains_decrease_and_beat_protocol() {
    let gland = default_gland();
    let config = PlanConfig { voxel_mm: 1.0, ..Default::default() };
    let plan = greedy_plan(&gland, &config).unwrap();
    assert_eq!(plan.cores.len(), 12);
    for w in plan.marginal_gains.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{:?}", plan.marginal_gains);
    }
    let total: f64 = plan.marginal_gains.iter().sum();
    assert!((total - plan.union_volume).abs() < 1e-6);

    let protocol = default_protocol(&gland, DEFAULT_PIVOT, DEFAULT_CORE_LENGTH_MM).unwrap();
    let baseline = protocol_plan(&protocol, &CoverageConfig { voxel_mm: 1.0, ..Default::default() }).unwrap();
    assert!(plan.union_volume >= baseline.union_volume);
}

#[test]
fn single_core_plan_and_bad_spacing() {
    let gland = default_gland();
    let one = greedy_plan(&gland, &PlanConfig { n_cores: 1, voxel_mm: 1.0, ..Default::default() }).unwrap();
    assert_eq!(one.cores.len(), 1);
    assert!(one.union_volume > 0.0);
    let err = greedy_plan(&gland, &PlanConfig { spacing_mm: 20.0, ..Default::default() }).unwrap_err();
    assert!(err.to_string().contains("spacing"), "{err}");
}
