//! Image metadata table and the landmark -> country -> continent chain.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

pub type LandmarkId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Continent {
    Asia,
    Europe,
    Africa,
    NorthAmerica,
    SouthAmerica,
    Antarctica,
    Oceania,
    #[serde(rename = "OTHER")]
    Other,
}

impl Continent {
    pub const ALL: [Continent; 8] = [
        Continent::Asia,
        Continent::Europe,
        Continent::Africa,
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Antarctica,
        Continent::Oceania,
        Continent::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Continent::Asia => "Asia",
            Continent::Europe => "Europe",
            Continent::Africa => "Africa",
            Continent::NorthAmerica => "NorthAmerica",
            Continent::SouthAmerica => "SouthAmerica",
            Continent::Antarctica => "Antarctica",
            Continent::Oceania => "Oceania",
            Continent::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Continent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "Asia" => Continent::Asia,
            "Europe" => Continent::Europe,
            "Africa" => Continent::Africa,
            "NorthAmerica" | "North America" => Continent::NorthAmerica,
            "SouthAmerica" | "South America" => Continent::SouthAmerica,
            "Antarctica" => Continent::Antarctica,
            "Oceania" => Continent::Oceania,
            "OTHER" => Continent::Other,
            other => return Err(Error::UnknownContinent(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Index,
    Query,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Index => "index",
            Split::Query => "query",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "index" => Ok(Split::Index),
            "query" => Ok(Split::Query),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub split: Split,
    pub landmark_id: Option<LandmarkId>,
    pub country: Option<String>,
    pub continent: Continent,
    pub is_clean: bool,
}

/// Validated, immutable metadata with per-split lookup tables.
#[derive(Debug, Clone)]
pub struct Catalog {
    records: Vec<ImageRecord>,
    landmark_to_country: BTreeMap<LandmarkId, String>,
    country_to_continent: BTreeMap<String, Continent>,
    by_id: HashMap<String, usize>,
    train_by_landmark: BTreeMap<LandmarkId, Vec<usize>>,
    // [continent][clean as usize]
    train_strata: [[Vec<usize>; 2]; 8],
}

impl Catalog {
    /// Builds a catalog, checking every record against the two maps.
    pub fn new(
        records: Vec<ImageRecord>,
        landmark_to_country: BTreeMap<LandmarkId, String>,
        country_to_continent: BTreeMap<String, Continent>,
    ) -> Result<Self> {
        for (lm, country) in &landmark_to_country {
            if !country_to_continent.contains_key(country) {
                return Err(Error::Inconsistent(format!(
                    "landmark {lm} maps to country `{country}` with no continent"
                )));
            }
        }

        let mut by_id = HashMap::with_capacity(records.len());
        let mut train_by_landmark: BTreeMap<LandmarkId, Vec<usize>> = BTreeMap::new();
        let mut train_strata: [[Vec<usize>; 2]; 8] = Default::default();

        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.image_id.clone()));
            }
            if r.split == Split::Train {
                let lm = r
                    .landmark_id
                    .ok_or_else(|| Error::MissingLandmark(r.image_id.clone()))?;
                if let Some(expected) = landmark_to_country.get(&lm) {
                    if r.country.as_deref() != Some(expected.as_str()) {
                        return Err(Error::Inconsistent(format!(
                            "`{}`: country {:?} but landmark {lm} maps to `{expected}`",
                            r.image_id, r.country
                        )));
                    }
                }
                train_by_landmark.entry(lm).or_default().push(i);
                train_strata[r.continent.index()][r.is_clean as usize].push(i);
            }
            let expected = derive_continent(r.country.as_deref(), &country_to_continent);
            if r.continent != expected {
                return Err(Error::Inconsistent(format!(
                    "`{}`: continent {} but country {:?} implies {}",
                    r.image_id, r.continent, r.country, expected
                )));
            }
        }

        Ok(Self {
            records,
            landmark_to_country,
            country_to_continent,
            by_id,
            train_by_landmark,
            train_strata,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), BTreeMap::new(), BTreeMap::new()).expect("empty catalog is valid")
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn landmark_to_country(&self) -> &BTreeMap<LandmarkId, String> {
        &self.landmark_to_country
    }

    pub fn country_to_continent(&self) -> &BTreeMap<String, Continent> {
        &self.country_to_continent
    }

    /// Record indices of train images grouped by landmark, ascending landmark id.
    pub fn train_by_landmark(&self) -> &BTreeMap<LandmarkId, Vec<usize>> {
        &self.train_by_landmark
    }

    /// Record indices of train images in one (continent, cleanliness) stratum.
    pub fn train_stratum(&self, continent: Continent, clean: bool) -> &[usize] {
        &self.train_strata[continent.index()][clean as usize]
    }

    pub fn ids_in_split(&self, split: Split) -> impl Iterator<Item = &str> {
        self.records
            .iter()
            .filter(move |r| r.split == split)
            .map(|r| r.image_id.as_str())
    }

    pub fn continent_of_country(&self, country: Option<&str>) -> Continent {
        derive_continent(country, &self.country_to_continent)
    }

    /// Writes the catalog and mapping files in the formats `load_catalog` reads.
    pub fn save(&self, catalog_path: &Path, mapping_path: &Path) -> Result<()> {
        let mut w = csv_writer(catalog_path)?;
        let wrap = |e: csv::Error| Error::io(catalog_path, e.into());
        w.write_record(CATALOG_HEADER).map_err(wrap)?;
        for r in &self.records {
            let lm = r.landmark_id.map(|l| l.to_string()).unwrap_or_default();
            let clean = if r.is_clean { "1" } else { "0" };
            w.write_record([
                r.image_id.as_str(),
                r.split.as_str(),
                lm.as_str(),
                r.country.as_deref().unwrap_or(""),
                r.continent.as_str(),
                clean,
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io(catalog_path, e))?;

        let mut w = csv_writer(mapping_path)?;
        let wrap = |e: csv::Error| Error::io(mapping_path, e.into());
        w.write_record(MAPPING_HEADER).map_err(wrap)?;
        for (lm, country) in &self.landmark_to_country {
            let continent = self.country_to_continent[country];
            w.write_record([lm.to_string().as_str(), country, continent.as_str()])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io(mapping_path, e))?;
        Ok(())
    }
}

fn derive_continent(country: Option<&str>, map: &BTreeMap<String, Continent>) -> Continent {
    country
        .and_then(|c| map.get(c).copied())
        .unwrap_or(Continent::Other)
}

const CATALOG_HEADER: [&str; 6] = [
    "image_id",
    "split",
    "landmark_id",
    "country",
    "continent",
    "is_clean",
];
const MAPPING_HEADER: [&str; 3] = ["landmark_id", "country", "continent"];

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(f))
}

fn csv_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(f);
    let got = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != header {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, got `{}`", header.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn opt(field: &str) -> Option<&str> {
    let f = field.trim();
    (!f.is_empty()).then_some(f)
}

fn read_rows(
    path: &Path,
    header: &[&str],
    mut on_row: impl FnMut(u64, &csv::StringRecord) -> std::result::Result<(), String>,
) -> Result<()> {
    let mut rdr = csv_reader(path, header)?;
    let mut rec = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(path, line, e.to_string())),
        }
        let line = rec.position().map_or(line, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        on_row(line, &rec).map_err(|m| parse_err(path, line, m))?;
    }
    Ok(())
}

/// Reads the landmark/country/continent mapping file.
pub fn load_mapping(
    path: &Path,
) -> Result<(BTreeMap<LandmarkId, String>, BTreeMap<String, Continent>)> {
    let mut lm_country = BTreeMap::new();
    let mut country_continent: BTreeMap<String, Continent> = BTreeMap::new();
    read_rows(path, &MAPPING_HEADER, |_, rec| {
        let lm: LandmarkId = rec[0]
            .trim()
            .parse()
            .map_err(|_| format!("bad landmark_id `{}`", &rec[0]))?;
        let country = opt(&rec[1]).ok_or("empty country")?.to_string();
        let continent: Continent = rec[2].parse().map_err(|e: Error| e.to_string())?;
        if let Some(prev) = country_continent.insert(country.clone(), continent) {
            if prev != continent {
                return Err(format!(
                    "country `{country}` listed under both {prev} and {continent}"
                ));
            }
        }
        if let Some(prev) = lm_country.insert(lm, country.clone()) {
            if prev != country {
                return Err(format!(
                    "landmark {lm} listed under both `{prev}` and `{country}`"
                ));
            }
        }
        Ok(())
    })?;
    Ok((lm_country, country_continent))
}

/// Loads and validates a catalog. Empty `country`/`continent` fields on
/// train rows are filled from the mapping; rows whose country is absent or
/// unmapped get continent OTHER.
pub fn load_catalog(catalog_path: &Path, mapping_path: &Path) -> Result<Catalog> {
    let (lm_country, country_continent) = load_mapping(mapping_path)?;
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    read_rows(catalog_path, &CATALOG_HEADER, |line, rec| {
        let image_id = opt(&rec[0]).ok_or("empty image_id")?.to_string();
        let split: Split = rec[1].parse().map_err(|e: Error| e.to_string())?;
        let landmark_id = match opt(&rec[2]) {
            None => None,
            Some(s) => Some(
                s.parse::<LandmarkId>()
                    .map_err(|_| format!("bad landmark_id `{s}`"))?,
            ),
        };
        let mut country = opt(&rec[3]).map(str::to_string);
        if split == Split::Train && country.is_none() {
            country = landmark_id.and_then(|l| lm_country.get(&l).cloned());
        }
        let derived = derive_continent(country.as_deref(), &country_continent);
        if let Some(c) = opt(&rec[4]) {
            let given: Continent = c.parse().map_err(|e: Error| e.to_string())?;
            if given != derived {
                return Err(format!(
                    "continent {given} disagrees with {derived} derived from country {country:?}"
                ));
            }
        }
        let is_clean = match rec[5].trim() {
            "1" => true,
            "0" | "" => false,
            other => return Err(format!("is_clean must be 0 or 1, got `{other}`")),
        };
        if let Some(first) = seen.insert(image_id.clone(), line) {
            return Err(format!("duplicate image_id `{image_id}` (first on line {first})"));
        }
        if split == Split::Train && landmark_id.is_none() {
            return Err(format!("train record `{image_id}` has no landmark_id"));
        }
        records.push(ImageRecord {
            image_id,
            split,
            landmark_id,
            country,
            continent: derived,
            is_clean,
        });
        Ok(())
    })?;
    Catalog::new(records, lm_country, country_continent)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub samples: usize,
    /// Distinct landmark ids; counted for the train split only.
    pub distinct_labels: usize,
    pub per_continent: BTreeMap<Continent, usize>,
    /// Clean/noisy counts; counted for the train split only.
    pub clean: usize,
    pub noisy: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CatalogStats {
    pub total: usize,
    pub train: SplitStats,
    pub index: SplitStats,
    pub query: SplitStats,
}

impl CatalogStats {
    pub fn split(&self, split: Split) -> &SplitStats {
        match split {
            Split::Train => &self.train,
            Split::Index => &self.index,
            Split::Query => &self.query,
        }
    }
}

pub fn split_stats(catalog: &Catalog) -> CatalogStats {
    let mut stats = CatalogStats {
        total: catalog.len(),
        ..Default::default()
    };
    for r in catalog.records() {
        let s = match r.split {
            Split::Train => &mut stats.train,
            Split::Index => &mut stats.index,
            Split::Query => &mut stats.query,
        };
        s.samples += 1;
        *s.per_continent.entry(r.continent).or_default() += 1;
        if r.split == Split::Train {
            if r.is_clean {
                s.clean += 1;
            } else {
                s.noisy += 1;
            }
        }
    }
    stats.train.distinct_labels = catalog.train_by_landmark().len();
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const MAPPING: &str = "landmark_id,country,continent\n1,FR,Europe\n2,JP,Asia\n";

    #[test]
    fn minimal_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\n\
             t1,train,1,FR,Europe,1\n\
             i1,index,,,,0\n\
             q1,query,,JP,,0\n",
        );
        let cat = load_catalog(&c, &m).unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.get("i1").unwrap().continent, Continent::Other);
        assert_eq!(cat.get("q1").unwrap().continent, Continent::Asia);
        assert_eq!(cat.train_stratum(Continent::Europe, true), &[0]);
    }

    #[test]
    fn train_country_filled_from_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\nt1,train,2,,,0\n",
        );
        let cat = load_catalog(&c, &m).unwrap();
        let r = cat.get("t1").unwrap();
        assert_eq!(r.country.as_deref(), Some("JP"));
        assert_eq!(r.continent, Continent::Asia);
    }

    #[test]
    fn unmapped_country_is_other() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\nt1,train,9,ZZ,,1\n",
        );
        let cat = load_catalog(&c, &m).unwrap();
        assert_eq!(cat.get("t1").unwrap().continent, Continent::Other);
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\nq,query,,,,0\nq,index,,,,0\n",
        );
        let err = load_catalog(&c, &m).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("duplicate"), "{err}");
    }

    #[test]
    fn train_without_landmark_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\nt,train,,FR,,1\n",
        );
        let err = load_catalog(&c, &m).unwrap_err().to_string();
        assert!(err.contains("no landmark_id"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\n\
             a,query,,,,0\nb,index,,,,0\nc,train,notanumber,,,1\n",
        );
        let err = load_catalog(&c, &m).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
        let c = write(
            dir.path(),
            "c2.csv",
            "image_id,split,landmark_id,country,continent,is_clean\na,query,,\n",
        );
        assert!(matches!(
            load_catalog(&c, &m).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn unknown_continent_in_mapping_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", "landmark_id,country,continent\n1,FR,Atlantis\n");
        let c = write(dir.path(), "c.csv", "image_id,split,landmark_id,country,continent,is_clean\n");
        let err = load_catalog(&c, &m).unwrap_err().to_string();
        assert!(err.contains("Atlantis"), "{err}");
    }

    #[test]
    fn conflicting_landmark_country_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(
            dir.path(),
            "m.csv",
            "landmark_id,country,continent\n1,FR,Europe\n1,DE,Europe\n",
        );
        let c = write(dir.path(), "c.csv", "image_id,split,landmark_id,country,continent,is_clean\n");
        assert!(load_catalog(&c, &m).is_err());
    }

    #[test]
    fn empty_catalog_stats_are_zero() {
        let s = split_stats(&Catalog::empty());
        assert_eq!(s, CatalogStats::default());
    }

    #[test]
    fn stats_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", MAPPING);
        let c = write(
            dir.path(),
            "c.csv",
            "image_id,split,landmark_id,country,continent,is_clean\n\
             t1,train,1,,,1\nt2,train,1,,,0\nt3,train,2,,,1\nt4,train,5,,,1\n\
             i1,index,,,,0\nq1,query,,,,0\n",
        );
        let s = split_stats(&load_catalog(&c, &m).unwrap());
        assert_eq!(s.total, 6);
        assert_eq!(s.train.samples, 4);
        assert_eq!(s.train.distinct_labels, 3);
        assert_eq!((s.train.clean, s.train.noisy), (3, 1));
        assert_eq!(s.train.per_continent[&Continent::Europe], 2);
        assert_eq!(s.train.per_continent[&Continent::Asia], 1);
        assert_eq!(s.train.per_continent[&Continent::Other], 1);
        assert_eq!(s.train.samples + s.index.samples + s.query.samples, s.total);
    }
}
