//! Optimizer behaviour on real key-rate landscapes. Each case runs a full
//! search, so the set is kept small.

use psqkd::channel::record_covariance;
use psqkd::keyrate::keyrate;
use psqkd::optimizer::{optimize_thresholds, sweep, OptimizationSpec};
use psqkd::postselection::PostSelectionRegion;
use psqkd::{ChannelParams, ProtocolParams};

fn p4() -> ProtocolParams {
    ProtocolParams::new(4.0, 1.0).unwrap()
}

fn quick() -> OptimizationSpec {
    OptimizationSpec {
        grid: 5,
        refine_seeds: 4,
        max_evals: 600,
        ..OptimizationSpec::default()
    }
}

#[test]
fn beats_the_three_db_limit() {
    let ch = ChannelParams::new(0.4, 0.0).unwrap();
    let plain = keyrate(&p4(), &ch, &PostSelectionRegion::none()).unwrap();
    assert!(plain.key_rate < 0.0);
    let opt = optimize_thresholds(&p4(), &ch, &OptimizationSpec::default()).unwrap();
    assert!(opt.region.la > 0.0 || opt.region.lb > 0.0);
    assert!(opt.report.key_rate > 0.0, "K = {}", opt.report.key_rate);
}

#[test]
fn tolerance_refinement_is_self_consistent() {
    let ch = ChannelParams::new(0.4, 0.0).unwrap();
    let coarse = OptimizationSpec {
        tol: 1e-6,
        ..OptimizationSpec::default()
    };
    let a = optimize_thresholds(&p4(), &ch, &coarse).unwrap();
    let b = optimize_thresholds(&p4(), &ch, &OptimizationSpec::default()).unwrap();
    let diff = (a.report.key_rate - b.report.key_rate).abs();
    assert!(diff < 1e-6, "{} vs {}", a.report.key_rate, b.report.key_rate);
}

#[test]
fn perfect_channel_never_loses_to_no_postselection() {
    let ch = ChannelParams::new(1.0, 0.0).unwrap();
    let trivial = keyrate(&p4(), &ch, &PostSelectionRegion::none()).unwrap();
    let opt = optimize_thresholds(&p4(), &ch, &quick()).unwrap();
    assert_eq!(opt.report.chi_ea_bits, 0.0);
    assert!(opt.report.key_rate >= trivial.key_rate - 1e-8);
}

#[test]
fn never_worse_than_grid_seeds() {
    let ch = ChannelParams::new(0.9, 0.01).unwrap();
    let spec = quick();
    let opt = optimize_thresholds(&p4(), &ch, &spec).unwrap();
    let sigma = record_covariance(&p4(), &ch);
    // Lower-threshold seeds with infinite upper thresholds.
    let mut best = f64::NEG_INFINITY;
    for i in 0..spec.grid {
        for j in 0..spec.grid {
            let u = |k: usize| (spec.lower_max.sqrt() * k as f64 / (spec.grid - 1) as f64).powi(2);
            let r = PostSelectionRegion::lower(u(i) * sigma.var_a.sqrt(), u(j) * sigma.var_b.sqrt()).unwrap();
            if let Ok(k) = keyrate(&p4(), &ch, &r) {
                best = best.max(k.key_rate);
            }
        }
    }
    assert!(best.is_finite());
    assert!(opt.report.key_rate >= best, "{} < {best}", opt.report.key_rate);
}

#[test]
fn returned_optimum_is_reproducible_and_feasible() {
    let ch = ChannelParams::new(0.7, 0.05).unwrap();
    let a = optimize_thresholds(&p4(), &ch, &quick()).unwrap();
    let b = optimize_thresholds(&p4(), &ch, &quick()).unwrap();
    assert_eq!(a, b);
    let r = a.region;
    PostSelectionRegion::new(r.la, r.ua, r.lb, r.ub).unwrap();
    let again = keyrate(&p4(), &ch, &r).unwrap();
    assert_eq!(again.key_rate, a.report.key_rate);
    assert!(again.physicality_margin >= -1e-9);
    assert!(a.audit.min_symplectic_eigenvalue >= 1.0 - 1e-9);
}

#[test]
fn single_point_sweep_matches_direct_optimisation() {
    let ch = ChannelParams::new(0.6, 0.01).unwrap();
    let direct = optimize_thresholds(&p4(), &ch, &quick()).unwrap();
    let rows = sweep(&p4(), &[0.01], &[0.6], &quick()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].outcome.as_ref().unwrap(), &direct);
}

#[test]
fn sweep_is_monotone_in_transmission_and_keeps_going_past_errors() {
    let ts = [0.6, 0.75, 0.9, 1.0];
    let rows = sweep(&p4(), &[0.01], &ts, &quick()).unwrap();
    assert_eq!(rows.len(), ts.len());
    let rates: Vec<f64> = rows[..3]
        .iter()
        .map(|r| r.outcome.as_ref().unwrap().report.key_rate)
        .collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{rates:?}");
    // A noisy perfect channel is not a valid point; the row records why.
    assert!(rows[3].outcome.as_ref().unwrap_err().contains("T = 1"));
}

#[test]
fn optimising_modulation_helps_at_low_transmission() {
    let ch = ChannelParams::new(0.25, 0.0).unwrap();
    let fixed = optimize_thresholds(&p4(), &ch, &quick()).unwrap();
    let free = optimize_thresholds(
        &p4(),
        &ch,
        &OptimizationSpec {
            va_bounds: Some((1.0, 40.0)),
            ..quick()
        },
    )
    .unwrap();
    assert!((1.0..=40.0).contains(&free.va));
    assert!(free.report.key_rate >= fixed.report.key_rate - 1e-12);
}
