// Licensed under the Apache-2.0 license

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig};

use super::{run_scenario, Outcome};

const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95% confidence. Returns `(0, 1)` for `n == 0`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    pub speed_mm_s: f64,
    pub misalignment_deg: f64,
    pub perched: bool,
    pub outcome: Outcome,
    pub contact_speed_mm_s: Option<f64>,
    pub trigger_error_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignBin {
    pub speed_lo_mm_s: f64,
    pub speed_hi_mm_s: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

impl CampaignBin {
    fn new(lo: f64, hi: f64, trials: usize, successes: usize) -> Self {
        let (wilson_lo, wilson_hi) = wilson_interval(successes, trials);
        CampaignBin {
            speed_lo_mm_s: lo,
            speed_hi_mm_s: hi,
            trials,
            successes,
            rate: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            wilson_lo,
            wilson_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub master_seed: u64,
    pub bins: Vec<CampaignBin>,
    pub overall: CampaignBin,
    pub trials: Vec<TrialSummary>,
}

impl CampaignReport {
    pub fn success_rate(&self) -> f64 {
        self.overall.rate
    }

    pub fn table_csv(&self) -> String {
        let mut out =
            String::from("speed_lo_mm_s,speed_hi_mm_s,trials,successes,rate,wilson_lo,wilson_hi\n");
        for b in self.bins.iter().chain(std::iter::once(&self.overall)) {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4}\n",
                b.speed_lo_mm_s,
                b.speed_hi_mm_s,
                b.trials,
                b.successes,
                b.rate,
                b.wilson_lo,
                b.wilson_hi
            ));
        }
        out
    }
}

/// Runs `trials` perch attempts with approach speed drawn uniformly from the
/// configured band and misalignment from a normal distribution. Every trial gets
/// its own sensor seed drawn from the master generator.
pub fn monte_carlo(
    base: &ScenarioConfig,
    trials: usize,
    master_seed: u64,
) -> Result<CampaignReport, ConfigError> {
    base.validate()?;
    let mc = &base.monte_carlo;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let tilt = (mc.misalignment_sigma_deg > 0.0).then(|| {
        Normal::new(mc.misalignment_mean_deg, mc.misalignment_sigma_deg).expect("sigma checked")
    });

    let mut summaries = Vec::with_capacity(trials);
    for index in 0..trials {
        let speed = if mc.speed_max_mm_s > mc.speed_min_mm_s {
            rng.gen_range(mc.speed_min_mm_s..mc.speed_max_mm_s)
        } else {
            mc.speed_min_mm_s
        };
        let misalignment = tilt
            .as_ref()
            .map_or(mc.misalignment_mean_deg, |d| d.sample(&mut rng));
        let seed = rng.gen::<u64>();
        let mut cfg = base.clone();
        cfg.approach.speed_mm_s = speed;
        cfg.approach.misalignment_deg = misalignment;
        cfg.sim.seed = seed;
        let r = run_scenario(&cfg)?;
        summaries.push(TrialSummary {
            index,
            seed,
            speed_mm_s: speed,
            misalignment_deg: misalignment,
            perched: r.perched,
            outcome: r.outcome,
            contact_speed_mm_s: r.contact_speed_mm_s,
            trigger_error_s: r.trigger_error_s,
        });
    }

    let (lo, hi) = (mc.speed_min_mm_s, mc.speed_max_mm_s);
    let nbins = if hi > lo { mc.speed_bins } else { 1 };
    let width = (hi - lo) / nbins as f64;
    let mut counts = vec![(0usize, 0usize); nbins];
    for t in &summaries {
        let b = if width > 0.0 {
            (((t.speed_mm_s - lo) / width) as usize).min(nbins - 1)
        } else {
            0
        };
        counts[b].0 += 1;
        counts[b].1 += t.perched as usize;
    }
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &(n, k))| {
            CampaignBin::new(lo + width * i as f64, lo + width * (i + 1) as f64, n, k)
        })
        .collect();
    let wins = summaries.iter().filter(|t| t.perched).count();
    Ok(CampaignReport {
        master_seed,
        bins,
        overall: CampaignBin::new(lo, hi, summaries.len(), wins),
        trials: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // Closed-form values at z = 1.96.
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_532).abs() < 1e-5);
        let (lo, hi) = wilson_interval(5, 10);
        assert!((lo - 0.236_593).abs() < 1e-5);
        assert!((hi - 0.763_407).abs() < 1e-5);
        let (lo, hi) = wilson_interval(200, 200);
        assert!((lo - 0.981_155).abs() < 1e-5);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        for n in 1..40 {
            for k in 0..=n {
                let (lo, hi) = wilson_interval(k, n);
                let p = k as f64 / n as f64;
                assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn all_misaligned_is_zero() {
        let mut cfg = ScenarioConfig::default();
        cfg.monte_carlo.misalignment_mean_deg = 25.0;
        cfg.monte_carlo.misalignment_sigma_deg = 1.0;
        let r = monte_carlo(&cfg, 10, 3).unwrap();
        assert_eq!(r.success_rate(), 0.0);
    }

    #[test]
    fn reproducible_under_master_seed() {
        let cfg = ScenarioConfig::default();
        let a = monte_carlo(&cfg, 12, 42).unwrap();
        let b = monte_carlo(&cfg, 12, 42).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo(&cfg, 12, 43).unwrap();
        assert_ne!(a.trials, c.trials);
    }
}
