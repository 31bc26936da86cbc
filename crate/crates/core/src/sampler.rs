//! Epoch sampling plans: id-uniform (P x K batches), softmax (one shuffle
//! per epoch) and continent-aware stratified sampling.
//!
//! Every plan is a pure function of the catalog and [`SamplerConfig`]; the
//! single random stream is a [`DetRng`] seeded with `cfg.seed`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::catalog::{Catalog, Continent};
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Continent draw probabilities used by continent-aware sampling.
pub const DEFAULT_CONTINENT_PROBS: [(Continent, f64); 8] = [
    (Continent::Asia, 0.5),
    (Continent::Europe, 0.2),
    (Continent::Africa, 0.15),
    (Continent::NorthAmerica, 0.1),
    (Continent::SouthAmerica, 0.02),
    (Continent::Antarctica, 0.01),
    (Continent::Oceania, 0.01),
    (Continent::Other, 0.01),
];

/// Clean vs noisy mixing weights. They sum to 0.99, so the clean
/// probability is their normalized ratio, 2/3.
pub const CLEAN_WEIGHT: f64 = 0.66;
pub const NOISY_WEIGHT: f64 = 0.33;

pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    IdUniform,
    Softmax,
    ContinentAware,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::IdUniform => "id-uniform",
            Strategy::Softmax => "softmax",
            Strategy::ContinentAware => "continent-aware",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id-uniform" | "id_uniform" => Ok(Strategy::IdUniform),
            "softmax" => Ok(Strategy::Softmax),
            "continent-aware" | "continent_aware" => Ok(Strategy::ContinentAware),
            other => Err(Error::invalid(format!("unknown sampling strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub continent_probs: BTreeMap<Continent, f64>,
    pub clean_prob: f64,
    /// Slots per epoch for continent-aware sampling. The other two
    /// strategies size their epoch from the catalog.
    pub epoch_size: usize,
    /// Landmark ids per batch (id-uniform).
    pub ids_per_batch: usize,
    /// Images per landmark id (id-uniform).
    pub images_per_id: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            continent_probs: DEFAULT_CONTINENT_PROBS.into_iter().collect(),
            clean_prob: CLEAN_WEIGHT / (CLEAN_WEIGHT + NOISY_WEIGHT),
            epoch_size: 10_000,
            ids_per_batch: 16,
            images_per_id: 4,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (c, &p) in &self.continent_probs {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!("probability for {c} is {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "continent probabilities sum to {sum}, expected 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.clean_prob) {
            return Err(Error::invalid(format!(
                "clean_prob must be in [0, 1], got {}",
                self.clean_prob
            )));
        }
        if self.epoch_size == 0 || self.ids_per_batch == 0 || self.images_per_id == 0 {
            return Err(Error::invalid("epoch_size, P and K must be positive"));
        }
        Ok(())
    }

    /// Parses `Asia=0.5,Europe=0.2,...`; unlisted continents get 0.
    pub fn parse_continent_probs(s: &str) -> Result<BTreeMap<Continent, f64>> {
        let mut out: BTreeMap<Continent, f64> = Continent::ALL.iter().map(|&c| (c, 0.0)).collect();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected continent=prob, got `{part}`")))?;
            let c: Continent = k.parse()?;
            let p: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad probability `{v}`")))?;
            out.insert(c, p);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    pub ids: Vec<String>,
    /// Fixed batch length when the plan is made of whole batches.
    pub batch_size: Option<usize>,
}

impl EpochPlan {
    pub fn batches(&self) -> impl Iterator<Item = &[String]> {
        self.ids.chunks(self.batch_size.unwrap_or(self.ids.len().max(1)))
    }

    /// One id per line; a blank line separates batches.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (b, batch) in self.batches().enumerate() {
            if b > 0 && self.batch_size.is_some() {
                out.push('\n');
            }
            for id in batch {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn sample(strategy: Strategy, catalog: &Catalog, cfg: &SamplerConfig) -> Result<EpochPlan> {
    match strategy {
        Strategy::IdUniform => sample_id_uniform(catalog, cfg),
        Strategy::Softmax => sample_softmax(catalog, cfg),
        Strategy::ContinentAware => sample_continent_aware(catalog, cfg),
    }
}

/// Shuffles the train landmark ids and cuts them into groups of P (an
/// incomplete trailing group is dropped). Each group becomes one batch with
/// K images per id: a random K-subset when the id has at least K images,
/// otherwise K draws with replacement.
pub fn sample_id_uniform(catalog: &Catalog, cfg: &SamplerConfig) -> Result<EpochPlan> {
    cfg.validate()?;
    let groups: Vec<&Vec<usize>> = catalog.train_by_landmark().values().collect();
    let (p, k) = (cfg.ids_per_batch, cfg.images_per_id);
    if groups.len() < p {
        return Err(Error::invalid(format!(
            "id-uniform needs at least P={p} train landmark ids, catalog has {}",
            groups.len()
        )));
    }
    let mut rng = DetRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    rng.shuffle(&mut order);

    let records = catalog.records();
    let mut ids = Vec::with_capacity(order.len() / p * p * k);
    for chunk in order.chunks_exact(p) {
        for &g in chunk {
            let members = groups[g];
            if members.len() >= k {
                let mut pick = members.clone();
                // partial Fisher-Yates: first k slots
                for i in 0..k {
                    let j = i + rng.below(pick.len() - i);
                    pick.swap(i, j);
                }
                ids.extend(pick[..k].iter().map(|&r| records[r].image_id.clone()));
            } else {
                for _ in 0..k {
                    let r = members[rng.below(members.len())];
                    ids.push(records[r].image_id.clone());
                }
            }
        }
    }
    Ok(EpochPlan {
        ids,
        batch_size: Some(p * k),
    })
}

/// One uniform permutation of every train image.
pub fn sample_softmax(catalog: &Catalog, cfg: &SamplerConfig) -> Result<EpochPlan> {
    cfg.validate()?;
    let mut ids: Vec<String> = catalog
        .ids_in_split(crate::catalog::Split::Train)
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(Error::invalid("softmax sampling over an empty train split"));
    }
    DetRng::new(cfg.seed).shuffle(&mut ids);
    Ok(EpochPlan {
        ids,
        batch_size: None,
    })
}

/// Each slot: continent from `continent_probs` renormalized over non-empty
/// continents, then the clean stratum with probability `clean_prob`
/// (renormalized when one side is empty), then a uniform image from that
/// (continent, cleanliness) stratum with replacement.
pub fn sample_continent_aware(catalog: &Catalog, cfg: &SamplerConfig) -> Result<EpochPlan> {
    cfg.validate()?;
    let strata: Vec<[&[usize]; 2]> = Continent::ALL
        .iter()
        .map(|&c| [catalog.train_stratum(c, false), catalog.train_stratum(c, true)])
        .collect();
    let continent_w: Vec<f64> = Continent::ALL
        .iter()
        .zip(&strata)
        .map(|(c, s)| {
            let populated = !s[0].is_empty() || !s[1].is_empty();
            if populated {
                cfg.continent_probs.get(c).copied().unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    if strata.iter().all(|s| s[0].is_empty() && s[1].is_empty()) {
        return Err(Error::invalid("continent-aware sampling: every stratum is empty"));
    }
    if continent_w.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid(
            "continent-aware sampling: no populated continent has positive probability",
        ));
    }

    let records = catalog.records();
    let mut rng = DetRng::new(cfg.seed);
    let mut ids = Vec::with_capacity(cfg.epoch_size);
    for _ in 0..cfg.epoch_size {
        let c = rng.weighted(&continent_w).expect("positive continent weight");
        let [noisy, clean] = strata[c];
        let w = [
            if noisy.is_empty() { 0.0 } else { 1.0 - cfg.clean_prob },
            if clean.is_empty() { 0.0 } else { cfg.clean_prob },
        ];
        // clean_prob of exactly 0 or 1 against an empty side still has to
        // land somewhere; fall back to the populated stratum.
        let side = rng
            .weighted(&w)
            .unwrap_or(if clean.is_empty() { 0 } else { 1 });
        let stratum = if side == 1 { clean } else { noisy };
        let r = stratum[rng.below(stratum.len())];
        ids.push(records[r].image_id.clone());
    }
    Ok(EpochPlan {
        ids,
        batch_size: None,
    })
}
