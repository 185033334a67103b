mod common;

use chrono::Duration;
use heatxai::griddata::GridStack;
use heatxai::heatwave::{detect_events, DetectConfig};
use heatxai::synth::{generate, onset_recovery, GroundTruth, SynthConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Precursor-region mean of the precursor variable on each given day.
fn region_means(stack: &GridStack, truth: &GroundTruth, cfg: &SynthConfig, dates: &[chrono::NaiveDate]) -> Vec<f64> {
    dates
        .iter()
        .filter_map(|d| stack.time.index_of(*d))
        .map(|t| {
            let f = stack.field(t, cfg.precursor_variable);
            truth.informative_cells.iter().map(|&c| f[c]).sum::<f64>() / truth.informative_cells.len() as f64
        })
        .collect()
}

/// Two-sided Welch t-test p-value.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
}

fn precursor_vs_control(amplitude: f64, seed: u64) -> f64 {
    let cfg = SynthConfig { seed, amplitude_per_period: vec![amplitude; 5], ..SynthConfig::default() };
    let (stack, truth) = generate(&cfg).unwrap();
    // Controls sit a few weeks after each precursor day, away from any burst.
    let control: Vec<_> = truth.precursor_dates.iter().map(|d| *d + Duration::days(45)).collect();
    welch_p(&region_means(&stack, &truth, &cfg, &truth.precursor_dates), &region_means(&stack, &truth, &cfg, &control))
}

#[test]
fn zero_amplitude_precursor_is_indistinguishable_from_noise() {
    for seed in 0..3 {
        let p = precursor_vs_control(0.0, seed);
        assert!(p > 0.01, "seed {seed}: p = {p}");
    }
}

#[test]
fn planted_precursor_is_detectable() {
    assert!(precursor_vs_control(1.0, 0) < 1e-6);
}

#[test]
fn planted_onsets_are_recovered() {
    for seed in 0..3 {
        let cfg = SynthConfig { seed, ..SynthConfig::default() };
        let (stack, truth) = generate(&cfg).unwrap();
        let region = cfg.event_region.to_mask("event", cfg.height, cfg.width).unwrap();
        let det = detect_events(&stack.variable_cube(0), &stack.time, &region, &DetectConfig::default(), seed).unwrap();
        let (recovered, spurious) = onset_recovery(&truth.onsets, &det.events.onsets, 2);
        assert!(recovered >= 0.9, "seed {seed}: recovered {recovered}");
        assert!(spurious <= 0.1, "seed {seed}: spurious {spurious}");
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let cfg = SynthConfig { first_year: 1990, last_year: 1993, ..SynthConfig::default() };
    let (a, ta) = generate(&cfg).unwrap();
    let (b, tb) = generate(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.data(), c.data());
}

#[test]
fn amplitudes_follow_the_periods() {
    let cfg = SynthConfig::default();
    let (_, truth) = generate(&cfg).unwrap();
    for (d, a) in truth.onsets.iter().zip(&truth.amplitudes) {
        assert_eq!(*a, cfg.amplitude_for(*d));
    }
    assert_eq!(truth.precursor_dates.len(), truth.onsets.len());
}
