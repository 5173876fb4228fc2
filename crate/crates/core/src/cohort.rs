//! Synthetic multi-country cohorts with data, class and feature heterogeneity.
//!
//! Each row draws a label from its country's prior, then two latent vectors:
//! a shared latent `z_s = shared_strength · V[y] + noise_scale · ε` whose class map is
//! common to all countries, and a local latent `z_l = local_strength · V[π_c(y)] + noise_scale · ε`
//! where `π_c` is a country-specific permutation of the class centroids. Features in the
//! cohort-wide mask intersection load on `z_s` with cohort-wide loadings; every other
//! feature loads on `z_l` with country-specific loadings. Each feature adds a country
//! offset, a per-participant random effect and cell noise, then goes through an affine
//! map to its own location and scale. All random terms scale with `noise_scale`.
//!
//! In-mask cells go missing at a per-feature rate drawn from one of three bands
//! (`[0, .1)`, `[.1, .5)`, `[.5, .75]`); out-of-mask cells at a rate in `[.85, .98]`,
//! so pruning at 80% removes them.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SeededRng;
use crate::sensing::registry::{feature_index, feature_names, FEATURE_COUNT};
use crate::sensing::{FeatureRow, FeatureTable};

pub const REPORT_INTERVAL_MS: i64 = 30 * 60 * 1000;
const HALF_WINDOW_MS: i64 = 5 * 60 * 1000;
const START_MS: i64 = 1_600_000_000_000;

pub const MISSING_BANDS: [(f64, f64); 3] = [(0.0, 0.1), (0.1, 0.5), (0.5, 0.75)];
pub const OUT_OF_MASK_MISSING: (f64, f64) = (0.85, 0.98);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountrySpec {
    pub code: String,
    pub participants: usize,
    pub instances: usize,
    /// Prior over the three mood classes (positive, neutral, negative).
    pub class_prior: [f64; 3],
    /// Registry feature names this country's sensors produce.
    pub mask: Vec<String>,
    /// Probability of each in-mask missingness band.
    #[serde(default = "default_band_weights")]
    pub band_weights: [f64; 3],
}

fn default_band_weights() -> [f64; 3] {
    [0.4, 0.35, 0.25]
}

fn default_shared_strength() -> f64 {
    0.5
}

fn default_local_strength() -> f64 {
    1.5
}

fn default_participant_scale() -> f64 {
    0.3
}

fn default_feature_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub seed: u64,
    pub shared_signal_dim: usize,
    /// Zero removes all label information from non-shared features.
    pub local_signal_dim: usize,
    pub noise_scale: f64,
    #[serde(default = "default_shared_strength")]
    pub shared_strength: f64,
    #[serde(default = "default_local_strength")]
    pub local_strength: f64,
    /// Participant random-effect scale, relative to `noise_scale`.
    #[serde(default = "default_participant_scale")]
    pub participant_scale: f64,
    /// Per-cell feature noise, relative to `noise_scale`.
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    pub countries: Vec<CountrySpec>,
}

/// Registry features every default country observes.
pub const CORE_FEATURES: [&str; 28] = [
    "act_on_foot_frac",
    "act_in_vehicle_frac",
    "act_on_bicycle_frac",
    "act_still_frac",
    "act_tilting_frac",
    "act_unknown_frac",
    "notif_posted",
    "notif_removed",
    "prox_mean",
    "prox_std",
    "prox_min",
    "screen_on_duration",
    "screen_off_duration",
    "screen_episodes",
    "screen_episode_mean",
    "screen_episode_min",
    "screen_episode_max",
    "screen_episode_std",
    "steps_total",
    "step_events",
    "touch_events",
    "presence_present_duration",
    "presence_absent_duration",
    "wifi_unique_devices",
    "wifi_rssi_mean",
    "wifi_rssi_min",
    "wifi_rssi_max",
    "wifi_rssi_std",
];

/// Registry features outside [`CORE_FEATURES`], in registry order.
pub fn optional_features() -> Vec<&'static str> {
    feature_names().into_iter().filter(|n| !CORE_FEATURES.contains(n)).collect()
}

fn default_mask(excluded_optional: &[usize]) -> Vec<String> {
    let optional = optional_features();
    let mut names: Vec<&str> = CORE_FEATURES.to_vec();
    names.extend(optional.iter().enumerate().filter(|(i, _)| !excluded_optional.contains(i)).map(|(_, n)| *n));
    let mut idx: Vec<usize> = names.iter().map(|n| feature_index(n).expect("registered")).collect();
    idx.sort_unstable();
    let all = feature_names();
    idx.into_iter().map(|i| all[i].to_string()).collect()
}

/// Six countries with the reference participant and instance counts.
pub fn default_cohort() -> CohortSpec {
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    // The 31 optional features are split so no optional feature is in every mask.
    let country = |code: &str, participants, instances, class_prior, excluded: Vec<usize>, band_weights| CountrySpec {
        code: code.to_string(),
        participants,
        instances,
        class_prior,
        mask: default_mask(&excluded),
        band_weights,
    };
    CohortSpec {
        seed: 0,
        shared_signal_dim: 2,
        local_signal_dim: 2,
        noise_scale: 1.0,
        shared_strength: default_shared_strength(),
        local_strength: default_local_strength(),
        participant_scale: default_participant_scale(),
        feature_noise: default_feature_noise(),
        countries: vec![
            country("CN", 38, 11523, [0.72, 0.25, 0.03], range(14, 31), [0.4, 0.35, 0.25]),
            country("DK", 17, 6424, [0.74, 0.22, 0.04], range(6, 15), [0.15, 0.25, 0.6]),
            country("IN", 19, 3071, [0.68, 0.26, 0.06], range(14, 27), [0.35, 0.4, 0.25]),
            country("MX", 19, 8400, [0.76, 0.20, 0.04], range(0, 3), [0.45, 0.35, 0.2]),
            country("PY", 22, 6467, [0.70, 0.25, 0.05], range(20, 31), [0.35, 0.35, 0.3]),
            country("UK", 52, 18832, [0.66, 0.28, 0.06], vec![3, 4, 5, 29, 30], [0.4, 0.35, 0.25]),
        ],
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.countries.is_empty() {
            return cfg("countries", "at least one country is required".into());
        }
        if self.shared_signal_dim == 0 {
            return cfg("shared_signal_dim", "must be positive".into());
        }
        for (key, v) in [
            ("noise_scale", self.noise_scale),
            ("shared_strength", self.shared_strength),
            ("local_strength", self.local_strength),
            ("participant_scale", self.participant_scale),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return cfg(key, format!("must be a non-negative finite number, got {v}"));
            }
        }
        let mut codes = BTreeSet::new();
        for c in &self.countries {
            let key = |k: &str| format!("countries[{}].{k}", c.code);
            if !codes.insert(c.code.as_str()) {
                return cfg(&key("code"), "duplicate country code".into());
            }
            if c.participants == 0 || c.instances < c.participants {
                return cfg(
                    &key("instances"),
                    format!("need instances ≥ participants ≥ 1, got {} and {}", c.instances, c.participants),
                );
            }
            let sum: f64 = c.class_prior.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return cfg(&key("class_prior"), format!("must sum to 1, sums to {sum}"));
            }
            if c.class_prior.iter().any(|&p| !(p > 0.0)) {
                return cfg(&key("class_prior"), "every class needs positive mass".into());
            }
            let bw: f64 = c.band_weights.iter().sum();
            if c.band_weights.iter().any(|&w| !(w >= 0.0)) || !(bw > 0.0) {
                return cfg(&key("band_weights"), "must be non-negative with positive sum".into());
            }
            if c.mask.is_empty() {
                return cfg(&key("mask"), "must list at least one feature".into());
            }
            let mut seen = BTreeSet::new();
            for name in &c.mask {
                feature_index(name).map_err(|_| Error::Config(format!("{}: unknown feature {name:?}", key("mask"))))?;
                if !seen.insert(name) {
                    return cfg(&key("mask"), format!("duplicate feature {name:?}"));
                }
            }
        }
        if self.shared_features().is_empty() {
            return Err(Error::EmptyIntersection(self.countries.len()));
        }
        Ok(())
    }

    /// Registry indices present in every country mask.
    pub fn shared_features(&self) -> Vec<usize> {
        (0..FEATURE_COUNT)
            .filter(|&j| self.countries.iter().all(|c| c.mask.iter().any(|n| feature_index(n).ok() == Some(j))))
            .collect()
    }

    pub fn country(&self, code: &str) -> Option<&CountrySpec> {
        self.countries.iter().find(|c| c.code == code)
    }

    /// Copy with every count multiplied by `factor` (at least one row per participant).
    pub fn scaled(&self, factor: f64) -> CohortSpec {
        let mut out = self.clone();
        for c in &mut out.countries {
            c.instances = ((c.instances as f64 * factor).round() as usize).max(c.participants);
        }
        out
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: CohortSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-country feature tables over the full registry with raw 1–5 labels and injected missingness.
    pub fn generate(&self) -> Result<Vec<SyntheticCountry>> {
        self.generate_inner(true)
    }

    /// As [`CohortSpec::generate`] but with every cell observed.
    pub fn generate_complete(&self) -> Result<Vec<SyntheticCountry>> {
        self.generate_inner(false)
    }

    fn generate_inner(&self, inject_missing: bool) -> Result<Vec<SyntheticCountry>> {
        self.validate()?;
        let shared: BTreeSet<usize> = self.shared_features().into_iter().collect();
        let mut cohort_rng = SeededRng::seed_from_u64(self.seed);
        let shared_loadings: Vec<Vec<f64>> =
            (0..FEATURE_COUNT).map(|_| unit_vector(&mut cohort_rng, self.shared_signal_dim)).collect();
        let locations: Vec<f64> = (0..FEATURE_COUNT).map(|_| cohort_rng.random_range(0.0..10.0)).collect();
        let scales: Vec<f64> = (0..FEATURE_COUNT).map(|_| cohort_rng.random_range(0.5..3.0)).collect();
        let centroids_s = class_centroids(self.shared_signal_dim);
        let centroids_l = class_centroids(self.local_signal_dim.max(1));
        let names: Vec<String> = feature_names().into_iter().map(String::from).collect();

        let mut out = Vec::with_capacity(self.countries.len());
        for (ci, c) in self.countries.iter().enumerate() {
            let mut rng = SeededRng::seed_from_u64(self.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(ci as u64 + 1)));
            let perm = PERMUTATIONS[ci % PERMUTATIONS.len()];
            let local_loadings: Vec<Vec<f64>> =
                (0..FEATURE_COUNT).map(|_| unit_vector(&mut rng, self.local_signal_dim.max(1))).collect();
            let offsets: Vec<f64> = (0..FEATURE_COUNT).map(|_| 0.2 * normal(&mut rng)).collect();
            let mask: Vec<bool> = {
                let mut m = vec![false; FEATURE_COUNT];
                for n in &c.mask {
                    m[feature_index(n)?] = true;
                }
                m
            };
            let missing_rates: Vec<f64> = mask
                .iter()
                .map(|&in_mask| {
                    let (lo, hi) =
                        if in_mask { MISSING_BANDS[pick(&mut rng, &c.band_weights)] } else { OUT_OF_MASK_MISSING };
                    rng.random_range(lo..=hi)
                })
                .collect();
            let counts = participant_counts(&mut rng, c.participants, c.instances);
            let effect_sd = self.participant_scale * self.noise_scale;
            let mut rows = Vec::with_capacity(c.instances);
            for (p, &count) in counts.iter().enumerate() {
                let user_id = format!("{}_{p:03}", c.code);
                let effects: Vec<f64> = (0..FEATURE_COUNT).map(|_| effect_sd * normal(&mut rng)).collect();
                for k in 0..count {
                    let y = pick(&mut rng, &c.class_prior);
                    let zs: Vec<f64> = centroids_s[y]
                        .iter()
                        .map(|&v| self.shared_strength * v + self.noise_scale * normal(&mut rng))
                        .collect();
                    let zl: Vec<f64> = if self.local_signal_dim == 0 {
                        vec![self.noise_scale * normal(&mut rng)]
                    } else {
                        centroids_l[perm[y]]
                            .iter()
                            .map(|&v| self.local_strength * v + self.noise_scale * normal(&mut rng))
                            .collect()
                    };
                    let mut values = Vec::with_capacity(FEATURE_COUNT);
                    for j in 0..FEATURE_COUNT {
                        let signal = if shared.contains(&j) {
                            dot(&shared_loadings[j], &zs)
                        } else {
                            dot(&local_loadings[j], &zl)
                        };
                        let noise = self.noise_scale * self.feature_noise * normal(&mut rng);
                        let v = locations[j] + scales[j] * (signal + offsets[j] + effects[j] + noise);
                        let missing = inject_missing && rng.random::<f64>() < missing_rates[j];
                        values.push(if missing { f64::NAN } else { v });
                    }
                    let t = START_MS + (p as i64) * 86_400_000 + (k as i64) * REPORT_INTERVAL_MS;
                    rows.push(FeatureRow {
                        user_id: user_id.clone(),
                        start_time: t - HALF_WINDOW_MS,
                        end_time: t + HALF_WINDOW_MS,
                        label: raw_label(&mut rng, y),
                        values,
                    });
                }
            }
            out.push(SyntheticCountry {
                code: c.code.clone(),
                table: FeatureTable::new(names.clone(), rows)?,
                missing_rates,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCountry {
    pub code: String,
    /// Raw 1–5 labels; NaN marks missing cells.
    pub table: FeatureTable,
    /// Per-registry-feature missingness rate used for this country.
    pub missing_rates: Vec<f64>,
}

/// All orderings of three classes; country `i` uses ordering `i mod 6` for its local latent.
const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];

/// Class centroids in `dim` dimensions: an ordinal line for one dimension, otherwise an
/// equilateral triangle in the first two coordinates.
fn class_centroids(dim: usize) -> [Vec<f64>; 3] {
    if dim == 1 {
        return [vec![-1.0], vec![0.0], vec![1.0]];
    }
    let h = 3f64.sqrt() / 2.0;
    let pad = |a: f64, b: f64| {
        let mut v = vec![0.0; dim];
        v[0] = a;
        v[1] = b;
        v
    };
    [pad(1.0, 0.0), pad(-0.5, h), pad(-0.5, -h)]
}

fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index drawn with probability proportional to `weights`.
fn pick(rng: &mut SeededRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Rows per participant: one each, the rest split by U(0.5, 1.5) weights with largest remainders.
fn participant_counts(rng: &mut SeededRng, participants: usize, instances: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..participants).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let extra = instances - participants;
    let exact: Vec<f64> = weights.iter().map(|w| w / total * extra as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..participants).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = extra - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts.iter().map(|c| c + 1).collect()
}

/// Raw 1–5 score for a class: positive → 1 or 2, neutral → 3, negative → 4 (70%) or 5.
fn raw_label(rng: &mut SeededRng, class: usize) -> i64 {
    match class {
        0 => 1 + i64::from(rng.random_bool(0.5)),
        1 => 3,
        _ => 4 + i64::from(rng.random_bool(0.3)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cohort_counts() {
        let spec = default_cohort();
        let uk = spec.country("UK").unwrap();
        assert_eq!((uk.participants, uk.instances), (52, 18832));
        let ind = spec.country("IN").unwrap();
        assert_eq!((ind.participants, ind.instances), (19, 3071));
        assert_eq!(spec.country("CN").unwrap().mask.len(), 59 - 17);
    }

    #[test]
    fn default_masks_intersect_to_the_core() {
        let spec = default_cohort();
        spec.validate().unwrap();
        let shared = spec.shared_features();
        assert_eq!(shared.len(), CORE_FEATURES.len());
        assert!(spec.countries.iter().all(|c| c.mask.len() > shared.len()));
        let cn = spec.country("CN").unwrap().mask.len();
        assert!(spec.countries.iter().all(|c| c.mask.len() >= cn));
    }

    #[test]
    fn participant_counts_sum_exactly() {
        let mut rng = SeededRng::seed_from_u64(1);
        let counts = participant_counts(&mut rng, 17, 6424);
        assert_eq!(counts.iter().sum::<usize>(), 6424);
        assert!(counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn validation_names_the_key() {
        let mut spec = default_cohort();
        spec.countries[0].class_prior = [0.5, 0.5, 0.0];
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("class_prior"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let spec = default_cohort();
        let text = spec.to_toml_string().unwrap();
        assert_eq!(CohortSpec::from_toml_str(&text).unwrap(), spec);
        let bad = text.replace("noise_scale", "noise_level");
        assert!(CohortSpec::from_toml_str(&bad).unwrap_err().to_string().contains("noise_level"));
    }
}
