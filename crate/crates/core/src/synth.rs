//! Seeded synthetic retrieval datasets with planted landmark clusters.
//!
//! Each landmark gets a random unit centroid; every image is
//! `normalize(centroid + sigma * z)` with `z` standard normal per component.
//! Landmarks are apportioned to continents by largest remainder, and each
//! landmark belongs to one of `countries_per_continent` countries of its
//! continent (OTHER landmarks have no country). A fixed number of train
//! images per landmark are marked noisy and relabelled to a different
//! landmark. Index and query rows carry no labels; the ground truth pairs
//! each query with the index images of its landmark.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};

use crate::catalog::{load_catalog, Catalog, Continent, ImageRecord, LandmarkId, Split};
use crate::embeddings::{load_embeddings, save_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::rng::DetRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_landmarks: usize,
    pub train_per_landmark: usize,
    pub index_per_landmark: usize,
    pub query_per_landmark: usize,
    pub dim: usize,
    /// Per-component standard deviation of the additive noise.
    pub sigma: f64,
    /// Share of each landmark's train images that are noisy (rounded to a count).
    pub noisy_fraction: f64,
    pub continent_distribution: BTreeMap<Continent, f64>,
    pub countries_per_continent: usize,
    pub seed: u64,
}

pub const DEFAULT_CONTINENT_DISTRIBUTION: [(Continent, f64); 8] = [
    (Continent::Europe, 0.30),
    (Continent::Asia, 0.25),
    (Continent::NorthAmerica, 0.15),
    (Continent::Africa, 0.08),
    (Continent::SouthAmerica, 0.08),
    (Continent::Oceania, 0.06),
    (Continent::Antarctica, 0.03),
    (Continent::Other, 0.05),
];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 100,
            train_per_landmark: 10,
            index_per_landmark: 5,
            query_per_landmark: 2,
            dim: 64,
            sigma: 0.2,
            noisy_fraction: 0.2,
            continent_distribution: DEFAULT_CONTINENT_DISTRIBUTION.into_iter().collect(),
            countries_per_continent: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks == 0 {
            return Err(Error::invalid("need at least one landmark"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.noisy_fraction) {
            return Err(Error::invalid("noisy_fraction must be in [0, 1]"));
        }
        if self.noisy_count() > 0 && self.n_landmarks < 2 {
            return Err(Error::invalid("noisy relabelling needs at least two landmarks"));
        }
        if self.countries_per_continent == 0 {
            return Err(Error::invalid("countries_per_continent must be positive"));
        }
        let mut sum = 0.0;
        for (c, &p) in &self.continent_distribution {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!("continent weight for {c} is {p}")));
            }
            sum += p;
        }
        if !(sum > 0.0) {
            return Err(Error::invalid("continent distribution has no mass"));
        }
        Ok(())
    }

    /// Noisy train images per landmark.
    pub fn noisy_count(&self) -> usize {
        (self.noisy_fraction * self.train_per_landmark as f64).round() as usize
    }

    /// Landmarks per continent, largest-remainder apportionment (ties to the
    /// earlier continent in `Continent::ALL` order).
    pub fn landmarks_per_continent(&self) -> BTreeMap<Continent, usize> {
        let total: f64 = self.continent_distribution.values().sum();
        let n = self.n_landmarks;
        let quotas: Vec<(Continent, f64)> = Continent::ALL
            .iter()
            .map(|c| {
                let w = self.continent_distribution.get(c).copied().unwrap_or(0.0);
                (*c, w / total * n as f64)
            })
            .collect();
        let mut counts: BTreeMap<Continent, usize> =
            quotas.iter().map(|&(c, q)| (c, q.floor() as usize)).collect();
        let assigned: usize = counts.values().sum();
        let mut rem: Vec<(usize, f64)> = quotas
            .iter()
            .enumerate()
            .map(|(i, &(_, q))| (i, q - q.floor()))
            .collect();
        rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in rem.iter().take(n - assigned) {
            *counts.get_mut(&quotas[i].0).unwrap() += 1;
        }
        counts
    }
}

fn country_code(c: Continent, k: usize) -> Option<String> {
    let prefix = match c {
        Continent::Asia => "AS",
        Continent::Europe => "EU",
        Continent::Africa => "AF",
        Continent::NorthAmerica => "NA",
        Continent::SouthAmerica => "SA",
        Continent::Antarctica => "AN",
        Continent::Oceania => "OC",
        Continent::Other => return None,
    };
    Some(format!("{prefix}{k}"))
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub catalog: Catalog,
    pub train: EmbeddingMatrix,
    pub index: EmbeddingMatrix,
    pub queries: EmbeddingMatrix,
    pub gt: GroundTruth,
}

fn sample_image(centroid: &[f64], sigma: f64, rng: &mut DetRng) -> Vec<f32> {
    let mut v: Vec<f64> = centroid
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng.inner_mut());
            c + sigma * z
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v.into_iter().map(|x| x as f32).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = DetRng::new(cfg.seed);
    let n = cfg.n_landmarks;

    // landmark -> continent in landmark order, continents in ALL order
    let per_continent = cfg.landmarks_per_continent();
    let mut continent_of = Vec::with_capacity(n);
    for c in Continent::ALL {
        continent_of.extend(std::iter::repeat_n(c, per_continent[&c]));
    }
    let mut landmark_to_country = BTreeMap::new();
    let mut country_to_continent = BTreeMap::new();
    let mut seen_in_continent: BTreeMap<Continent, usize> = BTreeMap::new();
    for (lm, &c) in continent_of.iter().enumerate() {
        let k = seen_in_continent.entry(c).or_default();
        if let Some(code) = country_code(c, *k % cfg.countries_per_continent) {
            landmark_to_country.insert(lm as LandmarkId, code.clone());
            country_to_continent.insert(code, c);
        }
        *k += 1;
    }

    let centroids: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(rng.inner_mut())).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let mut records = Vec::new();
    let mut train = (Vec::new(), Vec::new());
    let mut index = (Vec::new(), Vec::new());
    let mut queries = (Vec::new(), Vec::new());
    let mut gt = BTreeMap::new();
    let noisy = cfg.noisy_count();

    for lm in 0..n {
        let mut noisy_slots: Vec<usize> = (0..cfg.train_per_landmark).collect();
        rng.shuffle(&mut noisy_slots);
        let noisy_slots: BTreeSet<usize> = noisy_slots.into_iter().take(noisy).collect();
        for j in 0..cfg.train_per_landmark {
            let id = format!("t{lm:05}_{j:03}");
            train.1.extend(sample_image(&centroids[lm], cfg.sigma, &mut rng));
            let is_clean = !noisy_slots.contains(&j);
            let label = if is_clean {
                lm
            } else {
                // uniform over the other landmarks
                let other = rng.below(n - 1);
                if other >= lm { other + 1 } else { other }
            } as LandmarkId;
            let country = landmark_to_country.get(&label).cloned();
            let continent = country
                .as_ref()
                .map_or(Continent::Other, |c| country_to_continent[c]);
            records.push(ImageRecord {
                image_id: id.clone(),
                split: Split::Train,
                landmark_id: Some(label),
                country,
                continent,
                is_clean,
            });
            train.0.push(id);
        }
        let mut relevant = BTreeSet::new();
        for j in 0..cfg.index_per_landmark {
            let id = format!("i{lm:05}_{j:03}");
            index.1.extend(sample_image(&centroids[lm], cfg.sigma, &mut rng));
            relevant.insert(id.clone());
            records.push(unlabeled(&id, Split::Index));
            index.0.push(id);
        }
        for j in 0..cfg.query_per_landmark {
            let id = format!("q{lm:05}_{j:03}");
            queries.1.extend(sample_image(&centroids[lm], cfg.sigma, &mut rng));
            records.push(unlabeled(&id, Split::Query));
            if !relevant.is_empty() {
                gt.insert(id.clone(), relevant.clone());
            }
            queries.0.push(id);
        }
    }

    let catalog = Catalog::new(records, landmark_to_country, country_to_continent)?;
    let mk = |(ids, data): (Vec<String>, Vec<f32>)| {
        if ids.is_empty() {
            Ok(EmbeddingMatrix::new_unchecked(cfg.dim, ids, data))
        } else {
            EmbeddingMatrix::new(cfg.dim, ids, data)
        }
    };
    Ok(SynthDataset {
        catalog,
        train: mk(train)?,
        index: mk(index)?,
        queries: mk(queries)?,
        gt: GroundTruth(gt),
    })
}

fn unlabeled(id: &str, split: Split) -> ImageRecord {
    ImageRecord {
        image_id: id.to_string(),
        split,
        landmark_id: None,
        country: None,
        continent: Continent::Other,
        is_clean: false,
    }
}

/// File names used inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub catalog: PathBuf,
    pub mapping: PathBuf,
    pub train: (PathBuf, PathBuf),
    pub index: (PathBuf, PathBuf),
    pub queries: (PathBuf, PathBuf),
    pub gt: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        let pair = |name: &str| (dir.join(format!("{name}.emb")), dir.join(format!("{name}.ids")));
        Self {
            catalog: dir.join("catalog.csv"),
            mapping: dir.join("mapping.csv"),
            train: pair("train"),
            index: pair("index"),
            queries: pair("queries"),
            gt: dir.join("gt.csv"),
        }
    }

    pub fn all_files(&self) -> Vec<&Path> {
        vec![
            &self.catalog,
            &self.mapping,
            &self.train.0,
            &self.train.1,
            &self.index.0,
            &self.index.1,
            &self.queries.0,
            &self.queries.1,
            &self.gt,
        ]
        .into_iter()
        .map(PathBuf::as_path)
        .collect()
    }
}

impl SynthDataset {
    pub fn write(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = DatasetPaths::in_dir(dir);
        self.catalog.save(&p.catalog, &p.mapping)?;
        save_embeddings(&self.train, &p.train.0, &p.train.1)?;
        save_embeddings(&self.index, &p.index.0, &p.index.1)?;
        save_embeddings(&self.queries, &p.queries.0, &p.queries.1)?;
        self.gt.save(&p.gt)?;
        Ok(p)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = DatasetPaths::in_dir(dir);
        Ok(Self {
            catalog: load_catalog(&p.catalog, &p.mapping)?,
            train: load_embeddings(&p.train.0, &p.train.1)?,
            index: load_embeddings(&p.index.0, &p.index.1)?,
            queries: load_embeddings(&p.queries.0, &p.queries.1)?,
            gt: GroundTruth::load(&p.gt)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::split_stats;
    use crate::eval::mean_ap_of_lists;
    use crate::retrieval::search_topk;

    fn small() -> SynthConfig {
        SynthConfig {
            n_landmarks: 20,
            train_per_landmark: 5,
            index_per_landmark: 3,
            query_per_landmark: 1,
            dim: 16,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_is_perfect() {
        let cfg = SynthConfig { sigma: 0.0, ..small() };
        let d = generate_synthetic(&cfg).unwrap();
        let lists = search_topk(&d.queries, &d.index, 100).unwrap();
        assert_eq!(mean_ap_of_lists(&lists, &d.gt).unwrap(), 1.0);
    }

    #[test]
    fn no_noisy_fraction_all_clean() {
        let cfg = SynthConfig { noisy_fraction: 0.0, ..small() };
        let d = generate_synthetic(&cfg).unwrap();
        assert!(d
            .catalog
            .records()
            .iter()
            .filter(|r| r.split == Split::Train)
            .all(|r| r.is_clean));
    }

    #[test]
    fn planted_counts() {
        let cfg = small();
        let d = generate_synthetic(&cfg).unwrap();
        let s = split_stats(&d.catalog);
        assert_eq!(s.train.samples, 100);
        assert_eq!(s.index.samples, 60);
        assert_eq!(s.query.samples, 20);
        assert_eq!(s.train.noisy, 20 * cfg.noisy_count());
        assert_eq!(s.train.clean, 100 - s.train.noisy);
        assert_eq!(s.train.distinct_labels, 20);
        assert_eq!(s.train.per_continent.values().sum::<usize>(), 100);
    }

    #[test]
    fn apportionment_sums() {
        let counts = SynthConfig::default().landmarks_per_continent();
        assert_eq!(counts.values().sum::<usize>(), 100);
        assert_eq!(counts[&Continent::Europe], 30);
        assert_eq!(counts[&Continent::Antarctica], 3);
    }

    #[test]
    fn gt_is_same_landmark_index() {
        let d = generate_synthetic(&small()).unwrap();
        for (q, rel) in &d.gt.0 {
            let lm = &q[1..6];
            let want: BTreeSet<String> = d
                .index
                .ids()
                .iter()
                .filter(|i| &i[1..6] == lm)
                .cloned()
                .collect();
            assert_eq!(rel, &want);
        }
    }

    #[test]
    fn deterministic_and_round_trips() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.catalog.records(), b.catalog.records());
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let back = SynthDataset::read(dir.path()).unwrap();
        assert_eq!(back.catalog.records(), a.catalog.records());
        assert_eq!(back.train, a.train);
        assert_eq!(back.index, a.index);
        assert_eq!(back.queries, a.queries);
        assert_eq!(back.gt, a.gt);
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_synthetic(&SynthConfig { n_landmarks: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SynthConfig { dim: 1, ..small() }).is_err());
    }
}
