//! Synthetic proportional-hazards cohorts with planted modality structure.
//!
//! Each modality owns a slice of a Gaussian latent vector. Its features are a
//! random linear map of that slice plus noise, and its contribution to the
//! log hazard is `signal * u_m . z_m` for a random unit direction `u_m`. An
//! optional interaction adds `interaction * r_a * r_b` for one modality pair,
//! with `r_m = u_m . z_m`, which no single modality can explain on its own.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::{Cohort, FeatureKind, ModalityBlock};
use crate::error::{Error, Result};
use crate::kv::KvDocument;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModality {
    pub name: String,
    pub width: usize,
    pub latent: usize,
    /// Scale of this modality's share of the log hazard.
    pub signal: f64,
    /// Fraction of patients lacking the whole modality.
    pub missing: f64,
    /// Per-cell MCAR rate; one entry broadcasts to every column.
    pub feature_missing: Vec<f64>,
    pub noise: f64,
    /// Number of trailing columns rank-binned into categorical levels.
    pub categorical: usize,
    pub cardinality: usize,
    /// Copy the latent slice into the leading columns instead of mixing it.
    pub identity: bool,
}

impl SynthModality {
    pub fn new(name: &str, width: usize, latent: usize, signal: f64, missing: f64) -> Self {
        SynthModality {
            name: name.to_string(),
            width,
            latent,
            signal,
            missing,
            feature_missing: vec![0.0],
            noise: 0.5,
            categorical: 0,
            cardinality: 3,
            identity: false,
        }
    }

    fn cell_rate(&self, j: usize) -> f64 {
        if self.feature_missing.len() == 1 {
            self.feature_missing[0]
        } else {
            self.feature_missing[j]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    /// Target fraction of censored patients.
    pub censoring: f64,
    /// Hazard per day at zero log risk.
    pub baseline_hazard: f64,
    pub interaction: f64,
    pub interaction_pair: Option<(String, String)>,
    pub modalities: Vec<SynthModality>,
}

/// A generated cohort along with the planted log hazard of every patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub true_risk: Vec<f64>,
    /// `signal * u_m` per modality. With `identity` set, `width == latent`
    /// and zero noise, these are exactly the log-hazard weights of the
    /// features.
    pub latent_weights: BTreeMap<String, Vec<f64>>,
}

impl Default for SynthSpec {
    /// Sized like a small clinical cohort: 179 patients, roughly 45% censored,
    /// a complete clinical table, CT embeddings rarely missing and WSI
    /// embeddings missing for two thirds of patients.
    fn default() -> Self {
        let mut tabular = SynthModality::new("tabular", 24, 6, 0.8, 0.0);
        tabular.feature_missing = vec![0.05];
        tabular.categorical = 4;
        tabular.cardinality = 3;
        SynthSpec {
            n: 179,
            censoring: 0.447,
            baseline_hazard: 1.0 / 900.0,
            interaction: 0.0,
            interaction_pair: None,
            modalities: vec![
                SynthModality::new("ct", 2048, 16, 0.6, 0.028),
                tabular,
                SynthModality::new("wsi", 768, 16, 0.8, 0.665),
            ],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n == 0 {
            return bad("synthetic cohort needs n > 0".into());
        }
        if !(0.0..1.0).contains(&self.censoring) {
            return bad(format!("censoring rate {} outside [0, 1)", self.censoring));
        }
        if !(self.baseline_hazard > 0.0 && self.baseline_hazard.is_finite()) {
            return bad(format!("baseline hazard {} must be positive", self.baseline_hazard));
        }
        if self.modalities.is_empty() {
            return bad("synthetic cohort needs at least one modality".into());
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if self.modalities[..i].iter().any(|o| o.name == m.name) {
                return bad(format!("duplicate modality `{}`", m.name));
            }
            if m.width == 0 || m.latent == 0 {
                return bad(format!("modality `{}` needs positive width and latent size", m.name));
            }
            if !(0.0..=1.0).contains(&m.missing) {
                return bad(format!("modality `{}`: missing fraction {} outside [0, 1]", m.name, m.missing));
            }
            if m.feature_missing.len() != 1 && m.feature_missing.len() != m.width {
                return bad(format!(
                    "modality `{}`: {} feature missing rates for {} columns",
                    m.name,
                    m.feature_missing.len(),
                    m.width
                ));
            }
            if m.feature_missing.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad(format!("modality `{}`: feature missing rate outside [0, 1]", m.name));
            }
            if m.categorical > m.width || (m.categorical > 0 && m.cardinality < 2) {
                return bad(format!("modality `{}`: bad categorical layout", m.name));
            }
            if !(m.noise >= 0.0 && m.signal.is_finite()) {
                return bad(format!("modality `{}`: noise must be >= 0 and signal finite", m.name));
            }
        }
        if let Some((a, b)) = &self.interaction_pair {
            if a == b || self.modality(a).is_none() || self.modality(b).is_none() {
                return bad(format!("interaction pair ({a}, {b}) must name two distinct modalities"));
            }
        }
        Ok(())
    }

    pub fn modality(&self, name: &str) -> Option<&SynthModality> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn modality_mut(&mut self, name: &str) -> Option<&mut SynthModality> {
        self.modalities.iter_mut().find(|m| m.name == name)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("", "n", self.n);
        doc.set("", "censoring", self.censoring);
        doc.set("", "baseline_hazard", self.baseline_hazard);
        doc.set("", "interaction", self.interaction);
        if let Some((a, b)) = &self.interaction_pair {
            doc.set("", "interaction_pair", format!("{a},{b}"));
        }
        for m in &self.modalities {
            let s = format!("modality.{}", m.name);
            doc.set(&s, "width", m.width);
            doc.set(&s, "latent", m.latent);
            doc.set(&s, "signal", m.signal);
            doc.set(&s, "missing", m.missing);
            let rates: Vec<String> = m.feature_missing.iter().map(f64::to_string).collect();
            doc.set(&s, "feature_missing", rates.join(","));
            doc.set(&s, "noise", m.noise);
            doc.set(&s, "categorical", m.categorical);
            doc.set(&s, "cardinality", m.cardinality);
            doc.set(&s, "identity", m.identity);
        }
        doc
    }

    /// Reads a generator spec. Keys absent from the document keep the values
    /// of [`SynthSpec::default`] for top-level entries and of
    /// [`SynthModality::new`] for modality entries.
    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let base = SynthSpec::default();
        let mut modalities = Vec::new();
        for section in doc.section_names() {
            let Some(name) = section.strip_prefix("modality.") else {
                if !section.is_empty() {
                    return Err(Error::config(format!("unknown generator section [{section}]")));
                }
                continue;
            };
            let mut m = SynthModality::new(name, 0, 0, 0.0, 0.0);
            m.width = doc
                .parse_value(section, "width")?
                .ok_or_else(|| Error::config(format!("[{section}] needs `width`")))?;
            m.latent = doc.value_or(section, "latent", m.width.min(8))?;
            m.signal = doc.value_or(section, "signal", 0.0)?;
            m.missing = doc.value_or(section, "missing", 0.0)?;
            if let Some(raw) = doc.get(section, "feature_missing") {
                m.feature_missing = raw
                    .split(',')
                    .map(|r| r.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::config(format!("[{section}] feature_missing = {raw}: cannot parse")))?;
            }
            m.noise = doc.value_or(section, "noise", m.noise)?;
            m.categorical = doc.value_or(section, "categorical", 0)?;
            m.cardinality = doc.value_or(section, "cardinality", m.cardinality)?;
            m.identity = doc.value_or(section, "identity", false)?;
            modalities.push(m);
        }
        let interaction_pair = match doc.get("", "interaction_pair") {
            None => None,
            Some(raw) => {
                let (a, b) = raw
                    .split_once(',')
                    .ok_or_else(|| Error::config(format!("interaction_pair = {raw}: expected `a,b`")))?;
                Some((a.trim().to_string(), b.trim().to_string()))
            }
        };
        let spec = SynthSpec {
            n: doc.value_or("", "n", base.n)?,
            censoring: doc.value_or("", "censoring", base.censoring)?,
            baseline_hazard: doc.value_or("", "baseline_hazard", base.baseline_hazard)?,
            interaction: doc.value_or("", "interaction", 0.0)?,
            interaction_pair,
            modalities: if modalities.is_empty() { base.modalities } else { modalities },
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws a cohort from `spec`; identical seeds give identical cohorts.
pub fn synth_cohort(spec: &SynthSpec, seed: u64) -> Result<SyntheticCohort> {
    spec.validate()?;
    // Draw order follows modality names so a spec means the same cohort
    // however its modalities were listed.
    let mut spec = spec.clone();
    spec.modalities.sort_by(|a, b| a.name.cmp(&b.name));
    let spec = &spec;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Latent factors and each modality's scalar risk component.
    let mut latents = Vec::with_capacity(spec.modalities.len());
    let mut components = Vec::with_capacity(spec.modalities.len());
    let mut latent_weights = BTreeMap::new();
    for m in &spec.modalities {
        let z: Vec<f64> = (0..n * m.latent).map(|_| gaussian(&mut rng)).collect();
        let mut u: Vec<f64> = (0..m.latent).map(|_| gaussian(&mut rng)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|x| *x /= norm);
        let r: Vec<f64> = (0..n)
            .map(|i| z[i * m.latent..(i + 1) * m.latent].iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        latent_weights.insert(m.name.clone(), u.iter().map(|x| x * m.signal).collect());
        latents.push(z);
        components.push(r);
    }
    let index = |name: &str| spec.modalities.iter().position(|m| m.name == name);
    let pair = spec
        .interaction_pair
        .as_ref()
        .and_then(|(a, b)| Some((index(a)?, index(b)?)));
    let true_risk: Vec<f64> = (0..n)
        .map(|i| {
            let mut r: f64 = spec.modalities.iter().zip(&components).map(|(m, c)| m.signal * c[i]).sum();
            if let Some((a, b)) = pair {
                r += spec.interaction * components[a][i] * components[b][i];
            }
            r
        })
        .collect();

    // Event and censoring times.
    let event_draw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let censor_draw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
    let t_event: Vec<f64> = (0..n)
        .map(|i| event_draw[i] / (spec.baseline_hazard * true_risk[i].exp()))
        .collect();
    let rate = censoring_rate(&t_event, &censor_draw, spec.censoring);
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let c = if rate > 0.0 { censor_draw[i] / rate } else { f64::INFINITY };
        if c < t_event[i] {
            times.push(c);
            events.push(false);
        } else {
            times.push(t_event[i]);
            events.push(true);
        }
    }

    let mut blocks = Vec::with_capacity(spec.modalities.len());
    for (m, z) in spec.modalities.iter().zip(&latents) {
        blocks.push(synth_block(m, z, n, &mut rng)?);
    }
    let ids = (0..n).map(|i| format!("P{i:05}")).collect();
    Ok(SyntheticCohort {
        cohort: Cohort::new(ids, times, events, blocks)?,
        true_risk,
        latent_weights,
    })
}

/// Exponential censoring rate whose realized censored count is closest to
/// `target * n`. The count is monotone in the rate, so bisection suffices.
fn censoring_rate(t_event: &[f64], censor_draw: &[f64], target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let n = t_event.len();
    let wanted = (target * n as f64).round() as usize;
    let count = |rate: f64| (0..n).filter(|&i| censor_draw[i] / rate < t_event[i]).count();
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid.exp()) < wanted {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (lo.exp(), hi.exp());
    if count(a).abs_diff(wanted) <= count(b).abs_diff(wanted) {
        a
    } else {
        b
    }
}

fn synth_block(m: &SynthModality, z: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<ModalityBlock> {
    let (d, k) = (m.width, m.latent);
    let scale = 1.0 / (k as f64).sqrt();
    let loading: Vec<f64> = (0..d * k).map(|_| gaussian(rng) * scale).collect();
    let direct = if m.identity { d.min(k) } else { 0 };
    let mut values = vec![0.0; n * d];
    for i in 0..n {
        let zi = &z[i * k..(i + 1) * k];
        for j in 0..d {
            let signal = if j < direct {
                zi[j]
            } else {
                loading[j * k..(j + 1) * k].iter().zip(zi).map(|(a, b)| a * b).sum()
            };
            values[i * d + j] = signal + m.noise * gaussian(rng);
        }
    }

    let mut kinds = vec![FeatureKind::Numerical; d];
    for j in d - m.categorical..d {
        kinds[j] = FeatureKind::Categorical { cardinality: m.cardinality };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a * d + j].total_cmp(&values[b * d + j]));
        for (rank, &i) in order.iter().enumerate() {
            values[i * d + j] = (rank * m.cardinality / n) as f64;
        }
    }

    let observed: Vec<bool> = (0..n * d).map(|c| rng.gen::<f64>() >= m.cell_rate(c % d)).collect();
    let n_absent = ((m.missing * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut present = vec![true; n];
    for &i in &order[..n_absent.min(n)] {
        present[i] = false;
    }
    ModalityBlock::new(&m.name, kinds, values, observed, present)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::harrell_c;

    fn small_spec() -> SynthSpec {
        let mut spec = SynthSpec::default();
        spec.n = 1000;
        spec.censoring = 0.3;
        spec.modalities = vec![
            SynthModality::new("ct", 8, 4, 1.0, 0.05),
            SynthModality::new("wsi", 6, 4, 1.0, 0.665),
        ];
        spec
    }

    #[test]
    fn realized_missing_fractions_match_targets() {
        let s = synth_cohort(&small_spec(), 5).unwrap();
        let ct = s.cohort.block("ct").unwrap().missing_fraction();
        let wsi = s.cohort.block("wsi").unwrap().missing_fraction();
        assert!((ct - 0.05).abs() <= 0.02, "{ct}");
        assert!((wsi - 0.665).abs() <= 0.02, "{wsi}");
    }

    #[test]
    fn censoring_rate_within_three_points_over_twenty_seeds() {
        let spec = small_spec();
        for seed in 0..20 {
            let s = synth_cohort(&spec, seed).unwrap();
            let cens = 1.0 - s.cohort.n_events() as f64 / spec.n as f64;
            assert!((cens - 0.3).abs() <= 0.03, "seed {seed}: {cens}");
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let a = synth_cohort(&spec, 9).unwrap();
        let b = synth_cohort(&spec, 9).unwrap();
        assert_eq!(a, b);
        crate::cohort::write_cohort(&a.cohort, &dir.path().join("a")).unwrap();
        crate::cohort::write_cohort(&b.cohort, &dir.path().join("b")).unwrap();
        for f in ["outcome.csv", "block_ct.csv", "block_wsi.csv", "features.spec"] {
            let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
        assert_ne!(a, synth_cohort(&spec, 10).unwrap());
    }

    #[test]
    fn zero_signal_gives_flat_risk() {
        let mut spec = small_spec();
        spec.modalities.iter_mut().for_each(|m| m.signal = 0.0);
        let s = synth_cohort(&spec, 1).unwrap();
        assert!(s.true_risk.iter().all(|&r| r == 0.0));
        let c = harrell_c(&s.true_risk, s.cohort.times(), s.cohort.events()).unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn strong_signal_is_recoverable_from_true_risk() {
        let mut spec = small_spec();
        spec.modalities.iter_mut().for_each(|m| m.signal = 2.0);
        let s = synth_cohort(&spec, 2).unwrap();
        let c = harrell_c(&s.true_risk, s.cohort.times(), s.cohort.events()).unwrap();
        assert!(c > 0.8, "{c}");
    }

    #[test]
    fn categorical_columns_are_level_coded() {
        let mut spec = small_spec();
        spec.modalities[0].categorical = 2;
        spec.modalities[0].cardinality = 4;
        let s = synth_cohort(&spec, 3).unwrap();
        let b = s.cohort.block("ct").unwrap();
        assert_eq!(b.kinds()[7], FeatureKind::Categorical { cardinality: 4 });
        assert_eq!(b.kinds()[5], FeatureKind::Numerical);
    }

    #[test]
    fn default_spec_is_reference_sized() {
        let s = synth_cohort(&SynthSpec::default(), 0).unwrap();
        assert_eq!(s.cohort.len(), 179);
        assert_eq!(s.cohort.require_block("ct").unwrap().width(), 2048);
        assert_eq!(s.cohort.require_block("wsi").unwrap().width(), 768);
        assert_eq!(s.cohort.n_events(), 99);
        let wsi = s.cohort.block("wsi").unwrap().missing_fraction();
        assert!((wsi - 0.665).abs() < 0.01);
    }

    #[test]
    fn infeasible_specs_are_config_errors() {
        let mut spec = small_spec();
        spec.modalities[0].missing = 1.2;
        assert!(matches!(synth_cohort(&spec, 0), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.n = 0;
        assert!(matches!(synth_cohort(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn kv_round_trip() {
        let mut spec = small_spec();
        spec.interaction = 0.7;
        spec.interaction_pair = Some(("ct".into(), "wsi".into()));
        spec.modalities[1].feature_missing = vec![0.1; 6];
        let again = SynthSpec::from_kv(&KvDocument::parse(&spec.to_kv().to_string(), "t").unwrap()).unwrap();
        assert_eq!(again, spec);
    }
}
