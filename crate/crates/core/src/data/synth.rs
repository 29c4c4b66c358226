//! Synthetic ICU cohorts standing in for credential-gated EHR extracts.
//!
//! Each patient has a latent standardized mean per variable. Group members
//! get a group-specific offset on top. Measurements arrive as a Poisson
//! process per variable and follow an Ornstein-Uhlenbeck (continuous-time
//! AR(1)) excursion around the patient mean. Mortality is drawn from a
//! logistic link on a fixed linear score of the latent means.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{Episode, PERIOD_HOURS};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, RngStream};

/// The 14 variables shared by both source databases: (id, typical value, spread).
pub const DEFAULT_VARIABLES: [(&str, f64, f64); 14] = [
    ("diastolic_bp", 65.0, 12.0),
    ("systolic_bp", 120.0, 20.0),
    ("fio2", 0.40, 0.12),
    ("gcs_verbal", 3.5, 1.4),
    ("gcs_eyes", 3.2, 0.9),
    ("gcs_motor", 5.2, 1.2),
    ("gcs_total", 12.0, 3.0),
    ("glucose", 140.0, 45.0),
    ("heart_rate", 88.0, 17.0),
    ("mean_bp", 80.0, 13.0),
    ("spo2", 96.5, 2.5),
    ("resp_rate", 19.0, 5.0),
    ("temperature", 37.0, 0.7),
    ("ph", 7.38, 0.07),
];

pub fn default_variables() -> Vec<String> {
    DEFAULT_VARIABLES
        .iter()
        .map(|(v, _, _)| v.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub tag: String,
    pub prevalence: f64,
    /// Offset of the group's latent means, in between-patient standard
    /// deviations, applied with a random sign per variable.
    pub shift_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCohortConfig {
    pub n_patients: usize,
    pub variables: Vec<String>,
    pub mortality_rate: f64,
    pub groups: Vec<GroupSpec>,
    pub between_patient_sd: f64,
    pub within_patient_sd: f64,
    /// OU correlation time in hours.
    pub correlation_hours: f64,
    /// Measurement rates per variable are drawn uniformly from this range (per hour).
    pub min_rate_per_hour: f64,
    pub max_rate_per_hour: f64,
    /// Norm of the label weight vector on the standardized latent means.
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticCohortConfig {
    fn default() -> Self {
        SyntheticCohortConfig {
            n_patients: 5000,
            variables: default_variables(),
            mortality_rate: 0.13,
            groups: Vec::new(),
            between_patient_sd: 1.0,
            within_patient_sd: 0.5,
            correlation_hours: 6.0,
            min_rate_per_hour: 1.0,
            max_rate_per_hour: 2.0,
            signal_strength: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticCohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.variables.is_empty() {
            return bad("at least one variable required".into());
        }
        if !(self.mortality_rate > 0.0 && self.mortality_rate < 1.0) {
            return bad(format!(
                "mortality rate {} outside (0,1)",
                self.mortality_rate
            ));
        }
        let mut total = 0.0;
        for g in &self.groups {
            if !(0.0..=1.0).contains(&g.prevalence) {
                return bad(format!(
                    "group `{}` prevalence {} outside [0,1]",
                    g.tag, g.prevalence
                ));
            }
            if !g.shift_scale.is_finite() {
                return bad(format!("group `{}` shift must be finite", g.tag));
            }
            total += g.prevalence;
        }
        if total > 1.0 + 1e-12 {
            return bad(format!(
                "group prevalences sum to {total} > 1 (groups are mutually exclusive)"
            ));
        }
        if !(self.min_rate_per_hour > 0.0 && self.max_rate_per_hour >= self.min_rate_per_hour) {
            return bad("measurement rates must satisfy 0 < min <= max".into());
        }
        if !(self.between_patient_sd >= 0.0
            && self.within_patient_sd >= 0.0
            && self.correlation_hours > 0.0)
        {
            return bad("noise scales must be non-negative and correlation time positive".into());
        }
        Ok(())
    }
}

fn variable_scale(name: &str) -> (f64, f64) {
    DEFAULT_VARIABLES
        .iter()
        .find(|(v, _, _)| *v == name)
        .map(|(_, c, s)| (*c, *s))
        .unwrap_or((0.0, 1.0))
}

struct Latent {
    means: Vec<f64>,
    group: Option<usize>,
    u_label: f64,
}

/// Smallest intercept whose empirical rate `#(u < σ(b + s)) / n` reaches the
/// target; the rate is a non-decreasing step function of `b`.
pub(crate) fn calibrate_intercept(scores: &[f64], uniforms: &[f64], target: f64) -> f64 {
    let rate = |b: f64| {
        scores
            .iter()
            .zip(uniforms)
            .filter(|(s, u)| **u < sigmoid(b + **s))
            .count() as f64
            / scores.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // `hi` attains >= target; step back to `lo` when it is closer.
    if (rate(lo) - target).abs() < (rate(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

pub fn generate_synthetic_cohort(config: &SyntheticCohortConfig) -> Result<Vec<Episode>> {
    config.validate()?;
    let root = RngStream::new(config.seed, "synthetic-cohort", 0);
    let v = config.variables.len();

    let mut rng = root.child("label-weights", 0);
    let raw: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
    let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt().max(1e-12);
    let weights: Vec<f64> = raw
        .iter()
        .map(|w| config.signal_strength * w / norm)
        .collect();

    let mut rng = root.child("rates", 0);
    let rates: Vec<f64> = (0..v)
        .map(|_| rng.uniform_range(config.min_rate_per_hour, config.max_rate_per_hour))
        .collect();

    let shifts: Vec<Vec<f64>> = config
        .groups
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let mut rng = root.child("group-direction", g as u64);
            (0..v)
                .map(|_| {
                    if rng.uniform() < 0.5 {
                        -spec.shift_scale
                    } else {
                        spec.shift_scale
                    }
                })
                .collect()
        })
        .collect();

    let latents: Vec<Latent> = (0..config.n_patients)
        .map(|i| {
            let mut rng = root.child("latent", i as u64);
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut group = None;
            for (g, spec) in config.groups.iter().enumerate() {
                acc += spec.prevalence;
                if u < acc {
                    group = Some(g);
                    break;
                }
            }
            let means = (0..v)
                .map(|j| {
                    let offset = group.map_or(0.0, |g| shifts[g][j]);
                    offset + config.between_patient_sd * rng.normal()
                })
                .collect();
            Latent {
                means,
                group,
                u_label: rng.uniform(),
            }
        })
        .collect();

    let scores: Vec<f64> = latents
        .iter()
        .map(|l| {
            // group shifts move the measurements, not the risk
            let offset = |j: usize| l.group.map_or(0.0, |g| shifts[g][j]);
            l.means
                .iter()
                .zip(&weights)
                .enumerate()
                .map(|(j, (m, w))| (m - offset(j)) * w)
                .sum()
        })
        .collect();
    let uniforms: Vec<f64> = latents.iter().map(|l| l.u_label).collect();
    let intercept = calibrate_intercept(&scores, &uniforms, config.mortality_rate);

    let episodes = latents
        .par_iter()
        .enumerate()
        .map(|(i, latent)| {
            let mut rng = root.child("series", i as u64);
            let mut series = BTreeMap::new();
            for (j, name) in config.variables.iter().enumerate() {
                let (center, spread) = variable_scale(name);
                let mut points = Vec::new();
                let mut t = 0.0;
                let mut excursion = rng.normal();
                loop {
                    let gap = -(1.0 - rng.uniform()).ln() / rates[j];
                    t += gap;
                    if t > PERIOD_HOURS {
                        break;
                    }
                    let phi = (-gap / config.correlation_hours).exp();
                    excursion = phi * excursion + (1.0 - phi * phi).sqrt() * rng.normal();
                    let z = latent.means[j] + config.within_patient_sd * excursion;
                    points.push((t, center + spread * z));
                }
                if !points.is_empty() {
                    series.insert(name.clone(), points);
                }
            }
            if series.is_empty() {
                // guarantee at least one measurement
                let name = &config.variables[0];
                let (center, spread) = variable_scale(name);
                series.insert(
                    name.clone(),
                    vec![(PERIOD_HOURS * 0.5, center + spread * latent.means[0])],
                );
            }
            let label = u8::from(latent.u_label < sigmoid(intercept + scores[i]));
            let groups: BTreeSet<String> = latent
                .group
                .map(|g| config.groups[g].tag.clone())
                .into_iter()
                .collect();
            Episode {
                patient_id: format!("p{i:06}"),
                label,
                groups,
                series,
            }
        })
        .collect();
    Ok(episodes)
}
