// Licensed under the Apache-2.0 license

//! Opposed gecko-adhesive tile pairs.
//!
//! Normal adhesion only exists once the load tendon has sheared the tiles,
//! so capacity grows with shear preload up to a hard per-pair ceiling:
//!
//! ```text
//! capacity = min(CEILING, mu * shear_preload) * surface_quality
//! ```
//!
//! The linear shear-to-normal law is an assumption; only the ceiling is a
//! measured figure. Pairs carry load independently: a pair that exceeds its
//! capacity lets go without handing its share to the other pair in the same
//! step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Best-case normal adhesion of one pair on a smooth, clean, flat surface.
pub const CAPACITY_CEILING_N: f64 = 20.0;
/// Rated loading cycles before wear is flagged.
pub const RATED_CYCLES: u32 = 30_000;
/// Upper bound on the reaction impulse of a peel release.
pub const MAX_RELEASE_IMPULSE_N_S: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdhesionCalibration {
    /// Normal capacity per newton of shear preload.
    pub mu: f64,
    pub nominal_preload_n: f64,
    pub max_gap_mm: f64,
    pub max_speed_mm_s: f64,
    pub max_misalignment_deg: f64,
    /// Half-width of the per-trial multiplicative pull-test noise.
    pub pull_noise: f64,
    pub noise_seed: u64,
    pub release_impulse_n_s: f64,
}

impl Default for AdhesionCalibration {
    fn default() -> Self {
        AdhesionCalibration {
            mu: 2.0,
            nominal_preload_n: 10.0,
            max_gap_mm: 1.0,
            max_speed_mm_s: 200.0,
            max_misalignment_deg: 10.0,
            pull_noise: 0.08,
            noise_seed: 2019,
            release_impulse_n_s: 0.002,
        }
    }
}

/// Surface quality of the acrylic sheet used for the flight-unit pull tests.
pub const FLIGHT_SURFACE_QUALITY: f64 = 0.54;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactConditions {
    pub gap_mm: f64,
    pub approach_speed_mm_s: f64,
    pub angular_misalignment_deg: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngageFailure {
    #[error("no contact")]
    NoContact,
    #[error("approach speed too high")]
    ExcessSpeed,
    #[error("misalignment beyond wrist compliance")]
    ExcessMisalignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilePairState {
    pub in_contact: bool,
    pub engaged: bool,
    pub shear_preload_n: f64,
    pub load_cycles: u32,
    pub surface_quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Release {
    pub impulse_n_s: f64,
    /// Released while still carrying normal load.
    pub forcible: bool,
}

impl TilePairState {
    pub fn new(surface_quality: f64) -> Self {
        TilePairState {
            in_contact: false,
            engaged: false,
            shear_preload_n: 0.0,
            load_cycles: 0,
            surface_quality: surface_quality.clamp(f64::MIN_POSITIVE, 1.0),
        }
    }

    pub fn attempt_engage(
        &mut self,
        cond: &ContactConditions,
        cal: &AdhesionCalibration,
    ) -> Result<(), EngageFailure> {
        if self.engaged {
            return Ok(());
        }
        if cond.gap_mm > cal.max_gap_mm {
            return Err(EngageFailure::NoContact);
        }
        if cond.approach_speed_mm_s > cal.max_speed_mm_s {
            return Err(EngageFailure::ExcessSpeed);
        }
        if cond.angular_misalignment_deg.abs() > cal.max_misalignment_deg {
            return Err(EngageFailure::ExcessMisalignment);
        }
        self.in_contact = true;
        self.engaged = true;
        self.shear_preload_n = cal.nominal_preload_n;
        self.load_cycles += 1;
        Ok(())
    }

    pub fn normal_capacity(&self, cal: &AdhesionCalibration) -> f64 {
        if !self.engaged {
            return 0.0;
        }
        capacity(self.shear_preload_n, self.surface_quality, cal.mu)
    }

    /// Peel release. `load_n` is the normal load still on the pair.
    pub fn release(&mut self, load_n: f64, cal: &AdhesionCalibration) -> Release {
        if !self.engaged {
            return Release {
                impulse_n_s: 0.0,
                forcible: false,
            };
        }
        self.engaged = false;
        self.shear_preload_n = 0.0;
        Release {
            impulse_n_s: cal.release_impulse_n_s.clamp(0.0, MAX_RELEASE_IMPULSE_N_S),
            forcible: load_n > 0.0,
        }
    }

    pub fn wear_warning(&self) -> bool {
        self.load_cycles > RATED_CYCLES
    }

    fn detach(&mut self) {
        self.engaged = false;
        self.in_contact = false;
        self.shear_preload_n = 0.0;
    }
}

pub fn capacity(shear_preload_n: f64, surface_quality: f64, mu: f64) -> f64 {
    let q = surface_quality.clamp(0.0, 1.0);
    (mu * shear_preload_n.max(0.0)).min(CAPACITY_CEILING_N) * q
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LoadOutcome {
    Holds {
        per_pair_n: f64,
    },
    /// Indices of the pairs that let go this step. Empty when nothing was
    /// engaged to begin with.
    Detached {
        pairs: Vec<usize>,
    },
}

/// Splits `total_load_n` equally over the engaged pairs and checks each
/// against its own capacity.
pub fn apply_normal_load(
    pairs: &mut [TilePairState],
    total_load_n: f64,
    cal: &AdhesionCalibration,
) -> LoadOutcome {
    let engaged: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].engaged).collect();
    if total_load_n <= 0.0 {
        return LoadOutcome::Holds { per_pair_n: 0.0 };
    }
    if engaged.is_empty() {
        return LoadOutcome::Detached { pairs: Vec::new() };
    }
    let share = total_load_n / engaged.len() as f64;
    let failed: Vec<usize> = engaged
        .into_iter()
        .filter(|&i| share > pairs[i].normal_capacity(cal))
        .collect();
    if failed.is_empty() {
        return LoadOutcome::Holds { per_pair_n: share };
    }
    for &i in &failed {
        pairs[i].detach();
    }
    LoadOutcome::Detached { pairs: failed }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PullTrial {
    /// Rig force at the moment the sheet came free.
    pub total_n: f64,
    /// That force divided by the number of pairs that were engaged.
    pub per_pair_n: f64,
}

/// Ramps normal load at `pull_rate_n_s` until the sheet detaches and reports
/// the peak force the gripper held.
pub fn pull_test(
    pairs: &mut [TilePairState],
    pull_rate_n_s: f64,
    cal: &AdhesionCalibration,
) -> PullTrial {
    const DT_S: f64 = 1e-3;
    let engaged = pairs.iter().filter(|p| p.engaged).count();
    if engaged == 0 || pull_rate_n_s <= 0.0 {
        return PullTrial {
            total_n: 0.0,
            per_pair_n: 0.0,
        };
    }
    let mut peak = 0.0;
    let mut step = 1u64;
    loop {
        let load = pull_rate_n_s * DT_S * step as f64;
        match apply_normal_load(pairs, load, cal) {
            LoadOutcome::Holds { .. } => peak = load,
            LoadOutcome::Detached { .. } => {
                if pairs.iter().all(|p| !p.engaged) {
                    break;
                }
            }
        }
        step += 1;
    }
    PullTrial {
        total_n: peak,
        per_pair_n: peak / engaged as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullCampaign {
    pub trials: Vec<PullTrial>,
    pub mean_per_pair_n: f64,
    pub max_deviation_pct: f64,
}

/// Runs `trials` pull tests on a freshly engaged two-pair gripper. Each trial
/// scales surface quality by a seeded factor drawn uniformly from
/// `1 ± pull_noise`.
pub fn pull_campaign(
    trials: usize,
    surface_quality: f64,
    pull_rate_n_s: f64,
    cal: &AdhesionCalibration,
) -> PullCampaign {
    let mut rng = ChaCha8Rng::seed_from_u64(cal.noise_seed);
    let contact = ContactConditions {
        gap_mm: 0.0,
        approach_speed_mm_s: 0.0,
        angular_misalignment_deg: 0.0,
    };
    let results: Vec<PullTrial> = (0..trials)
        .map(|_| {
            let factor = if cal.pull_noise > 0.0 {
                rng.gen_range(1.0 - cal.pull_noise..=1.0 + cal.pull_noise)
            } else {
                1.0
            };
            let q = (surface_quality * factor).min(1.0);
            let mut pairs = [TilePairState::new(q), TilePairState::new(q)];
            for p in &mut pairs {
                p.attempt_engage(&contact, cal)
                    .expect("bench contact is ideal");
            }
            pull_test(&mut pairs, pull_rate_n_s, cal)
        })
        .collect();
    let mean = if results.is_empty() {
        0.0
    } else {
        results.iter().map(|t| t.per_pair_n).sum::<f64>() / results.len() as f64
    };
    let max_dev = results
        .iter()
        .map(|t| (t.per_pair_n - mean).abs() / mean * 100.0)
        .fold(0.0, f64::max);
    PullCampaign {
        trials: results,
        mean_per_pair_n: mean,
        max_deviation_pct: max_dev,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cond(gap: f64, speed: f64, tilt: f64) -> ContactConditions {
        ContactConditions {
            gap_mm: gap,
            approach_speed_mm_s: speed,
            angular_misalignment_deg: tilt,
        }
    }

    fn engaged(q: f64) -> TilePairState {
        let mut p = TilePairState::new(q);
        p.attempt_engage(&cond(0.0, 0.0, 0.0), &AdhesionCalibration::default())
            .unwrap();
        p
    }

    #[test]
    fn engage_windows() {
        let cal = AdhesionCalibration::default();
        let mut p = TilePairState::new(1.0);
        assert_eq!(p.attempt_engage(&cond(0.0, 40.0, 3.0), &cal), Ok(()));
        assert_eq!(p.load_cycles, 1);
        assert_eq!(p.shear_preload_n, 10.0);

        let mut p = TilePairState::new(1.0);
        assert_eq!(
            p.attempt_engage(&cond(0.0, 40.0, 15.0), &cal),
            Err(EngageFailure::ExcessMisalignment)
        );
        assert_eq!(
            p.attempt_engage(&cond(5.0, 40.0, 0.0), &cal),
            Err(EngageFailure::NoContact)
        );
        assert_eq!(
            p.attempt_engage(&cond(0.0, 250.0, 0.0), &cal),
            Err(EngageFailure::ExcessSpeed)
        );
        assert!(!p.engaged);
        assert_eq!(p.load_cycles, 0);
    }

    #[test]
    fn capacity_examples() {
        let cal = AdhesionCalibration::default();
        assert_eq!(engaged(1.0).normal_capacity(&cal), 20.0);
        let mut p = engaged(1.0);
        p.shear_preload_n = 0.0;
        assert_eq!(p.normal_capacity(&cal), 0.0);
        assert!((engaged(0.54).normal_capacity(&cal) - 10.8).abs() < 1e-12);
        assert_eq!(TilePairState::new(1.0).normal_capacity(&cal), 0.0);
    }

    #[test]
    fn load_examples() {
        let cal = AdhesionCalibration::default();
        let mut two = [engaged(1.0), engaged(1.0)];
        assert_eq!(
            apply_normal_load(&mut two, 30.0, &cal),
            LoadOutcome::Holds { per_pair_n: 15.0 }
        );
        let mut one = [engaged(1.0), TilePairState::new(1.0)];
        assert_eq!(
            apply_normal_load(&mut one, 25.0, &cal),
            LoadOutcome::Detached { pairs: vec![0] }
        );
        assert_eq!(
            apply_normal_load(&mut two, 0.0, &cal),
            LoadOutcome::Holds { per_pair_n: 0.0 }
        );
    }

    #[test]
    fn weaker_pair_detaches_alone() {
        let cal = AdhesionCalibration::default();
        let mut pairs = [engaged(1.0), engaged(0.3)];
        let strong_cap = pairs[0].normal_capacity(&cal);
        assert_eq!(
            apply_normal_load(&mut pairs, 16.0, &cal),
            LoadOutcome::Detached { pairs: vec![1] }
        );
        assert!(pairs[0].engaged);
        assert_eq!(pairs[0].normal_capacity(&cal), strong_cap);
    }

    #[test]
    fn release_examples() {
        let cal = AdhesionCalibration::default();
        let mut p = engaged(1.0);
        let r = p.release(0.0, &cal);
        assert!(r.impulse_n_s <= MAX_RELEASE_IMPULSE_N_S && r.impulse_n_s > 0.0);
        assert!(!r.forcible && !p.engaged);
        assert_eq!(p.release(0.0, &cal).impulse_n_s, 0.0);

        let mut p = engaged(1.0);
        assert!(p.release(5.0, &cal).forcible);
    }

    #[test]
    fn release_impulse_is_clamped() {
        let cal = AdhesionCalibration {
            release_impulse_n_s: 1.0,
            ..Default::default()
        };
        let mut p = engaged(1.0);
        assert_eq!(p.release(0.0, &cal).impulse_n_s, MAX_RELEASE_IMPULSE_N_S);
    }

    #[test]
    fn wear_counter() {
        let cal = AdhesionCalibration::default();
        let mut p = TilePairState::new(1.0);
        let fresh_cap = engaged(1.0).normal_capacity(&cal);
        for _ in 0..RATED_CYCLES {
            p.attempt_engage(&cond(0.0, 0.0, 0.0), &cal).unwrap();
            p.attempt_engage(&cond(0.0, 0.0, 0.0), &cal).unwrap();
            assert_eq!(p.normal_capacity(&cal), fresh_cap);
            p.release(0.0, &cal);
        }
        assert_eq!(p.load_cycles, RATED_CYCLES);
        assert!(!p.wear_warning());
        p.attempt_engage(&cond(0.0, 0.0, 0.0), &cal).unwrap();
        assert!(p.wear_warning());
        assert_eq!(p.normal_capacity(&cal), fresh_cap);
    }

    #[test]
    fn pull_test_ideal_and_disengaged() {
        let cal = AdhesionCalibration::default();
        let mut pairs = [engaged(1.0), engaged(1.0)];
        let t = pull_test(&mut pairs, 10.0, &cal);
        assert!((t.per_pair_n - 20.0).abs() < 0.011, "{t:?}");
        let mut loose = [TilePairState::new(1.0), TilePairState::new(1.0)];
        assert_eq!(pull_test(&mut loose, 10.0, &cal).total_n, 0.0);
    }

    proptest! {
        #[test]
        fn capacity_monotone_and_capped(
            s1 in 0.0f64..50.0, s2 in 0.0f64..50.0,
            q1 in 0.001f64..=1.0, q2 in 0.001f64..=1.0,
            mu in 0.1f64..10.0,
        ) {
            let (slo, shi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let (qlo, qhi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(capacity(slo, qlo, mu) <= capacity(shi, qlo, mu));
            prop_assert!(capacity(slo, qlo, mu) <= capacity(slo, qhi, mu));
            prop_assert!(capacity(shi, qhi, mu) <= CAPACITY_CEILING_N);
        }

        #[test]
        fn release_bound_holds(q in 0.001f64..=1.0, load in 0.0f64..30.0) {
            let cal = AdhesionCalibration::default();
            let mut p = engaged(q);
            prop_assert!(p.release(load, &cal).impulse_n_s <= MAX_RELEASE_IMPULSE_N_S);
        }
    }
}
