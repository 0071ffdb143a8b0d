//! Seeded synthetic datasets. Every generator is a pure function of its seed
//! and spec, so files are byte-identical across runs and platforms.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fabric_core::domain::SiteId;

/// Regions of the gridded climate table: name, centre latitude, longitude,
/// base temperature (C) and base monthly precipitation (mm).
pub const REGIONS: [(&str, f64, f64, f64, f64); 5] = [
    ("northeast", 43.0, -72.0, 8.0, 95.0),
    ("southeast", 32.0, -84.0, 18.0, 115.0),
    ("midwest", 41.0, -92.0, 10.0, 80.0),
    ("southwest", 34.0, -111.0, 17.0, 25.0),
    ("northwest", 46.0, -121.0, 9.0, 70.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct EarthSpec {
    pub models: Vec<String>,
    pub first_year: i32,
    pub last_year: i32,
    pub cells_per_region: usize,
}

impl Default for EarthSpec {
    fn default() -> Self {
        EarthSpec {
            models: vec!["ccsm4".into(), "gfdl_esm2m".into()],
            first_year: 2040,
            last_year: 2060,
            cells_per_region: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarthRecord {
    pub model: String,
    pub region: &'static str,
    pub cell: usize,
    pub lat: f64,
    pub lon: f64,
    pub year: i32,
    pub month: u32,
    /// Monthly precipitation, mm.
    pub pr: f64,
    /// Monthly mean temperature, C.
    pub tas: f64,
}

/// Seasonal sinusoid plus a linear warming/wetting trend plus Gaussian noise,
/// per model, region and grid cell. Values are rounded to 3 decimals so the
/// CSV text is the record.
pub fn earth_records(seed: u64, spec: &EarthSpec) -> Vec<EarthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let round = |v: f64| (v * 1000.0).round() / 1000.0;
    let mut out = Vec::new();
    for (mi, model) in spec.models.iter().enumerate() {
        let sensitivity = 0.02 + 0.01 * mi as f64;
        for (region, lat, lon, tbase, pbase) in REGIONS {
            for cell in 0..spec.cells_per_region {
                let (clat, clon) = (lat + rng.random_range(-1.5..1.5), lon + rng.random_range(-1.5..1.5));
                let offset = rng.random_range(-1.0..1.0);
                for year in spec.first_year..=spec.last_year {
                    let t = f64::from(year - spec.first_year);
                    for month in 1..=12u32 {
                        let phase = 2.0 * PI * f64::from(month - 1) / 12.0;
                        let tas = tbase + offset - 11.0 * phase.cos() + sensitivity * t + 0.6 * noise.sample(&mut rng);
                        let pr = (pbase * (1.0 + 0.25 * (phase + 0.7).sin()) + 0.15 * t + 6.0 * noise.sample(&mut rng)).max(0.0);
                        out.push(EarthRecord {
                            model: model.clone(),
                            region,
                            cell,
                            lat: round(clat),
                            lon: round(clon),
                            year,
                            month,
                            pr: round(pr),
                            tas: round(tas),
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn earth_csv(records: &[EarthRecord]) -> Vec<u8> {
    let mut s = String::from("model,region,cell,lat,lon,year,month,pr,tas\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{:.3},{:.3},{},{},{:.3},{:.3}",
            r.model, r.region, r.cell, r.lat, r.lon, r.year, r.month, r.pr, r.tas
        );
    }
    s.into_bytes()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShbeSpec {
    pub total_rows: usize,
    /// Sites and the fraction of rows each holds; the last site takes the
    /// remainder.
    pub shards: Vec<(SiteId, f64)>,
    /// Intercept, illuminance and occupancy coefficients.
    pub coefficients: [f64; 3],
    pub noise_sd: f64,
}

impl Default for ShbeSpec {
    fn default() -> Self {
        ShbeSpec {
            total_rows: 900,
            shards: vec![(SiteId::new("siteA"), 0.4), (SiteId::new("siteB"), 0.35), (SiteId::new("siteC"), 0.25)],
            coefficients: [0.85, -0.7, 0.2],
            noise_sd: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShbeRow {
    pub row_id: usize,
    /// Work-area illuminance, normalized to [0, 1].
    pub illuminance: f64,
    /// Fraction of the zone occupied.
    pub occupancy: f64,
    pub switch_prob: f64,
}

impl ShbeRow {
    pub fn features(&self) -> [f64; 3] {
        [1.0, self.illuminance, self.occupancy]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShbeData {
    pub rows: Vec<ShbeRow>,
    /// Row ids held by each site, ascending.
    pub shards: BTreeMap<SiteId, Vec<usize>>,
}

pub fn shbe_data(seed: u64, spec: &ShbeSpec) -> ShbeData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd).expect("noise sd is finite and positive");
    let [b0, b1, b2] = spec.coefficients;
    let rows: Vec<ShbeRow> = (0..spec.total_rows)
        .map(|row_id| {
            let illuminance: f64 = rng.random();
            let occupancy: f64 = rng.random();
            ShbeRow {
                row_id,
                illuminance,
                occupancy,
                switch_prob: b0 + b1 * illuminance + b2 * occupancy + noise.sample(&mut rng),
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.total_rows).collect();
    order.shuffle(&mut rng);
    let mut shards = BTreeMap::new();
    let mut start = 0;
    for (i, (site, fraction)) in spec.shards.iter().enumerate() {
        let end = if i + 1 == spec.shards.len() {
            spec.total_rows
        } else {
            (start + (fraction * spec.total_rows as f64).round() as usize).min(spec.total_rows)
        };
        let mut ids = order[start..end].to_vec();
        ids.sort_unstable();
        shards.insert(site.clone(), ids);
        start = end;
    }
    ShbeData { rows, shards }
}

impl ShbeData {
    /// Shortest round-trip float formatting keeps the scripts' parsed values
    /// bit-identical to `rows`.
    pub fn shard_csv(&self, site: &SiteId) -> Vec<u8> {
        let mut s = String::from("row_id,illuminance,occupancy,switch_prob\n");
        for &id in self.shards.get(site).map(Vec::as_slice).unwrap_or_default() {
            let r = &self.rows[id];
            let _ = writeln!(s, "{},{},{},{}", r.row_id, r.illuminance, r.occupancy, r.switch_prob);
        }
        s.into_bytes()
    }
}

pub const EARTH_DATASET: &str = "nex_dcp30";
pub const EARTH_SITE: &str = "siteA";
pub const SHBE_DATASET: &str = "lighting";

/// Every fixture dataset, per site: file name to contents.
pub fn generate_datasets(seed: u64) -> BTreeMap<SiteId, BTreeMap<String, Vec<u8>>> {
    let mut out: BTreeMap<SiteId, BTreeMap<String, Vec<u8>>> = BTreeMap::new();
    out.entry(SiteId::new(EARTH_SITE)).or_default().insert(
        format!("{EARTH_DATASET}.csv"),
        earth_csv(&earth_records(seed, &EarthSpec::default())),
    );
    let shbe = shbe_data(seed, &ShbeSpec::default());
    for site in shbe.shards.keys() {
        out.entry(site.clone())
            .or_default()
            .insert(format!("{SHBE_DATASET}.csv"), shbe.shard_csv(site));
    }
    out
}

/// Writes [`generate_datasets`] under `dir/<site>/`.
pub fn write_datasets(dir: &Path, seed: u64) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (site, files) in generate_datasets(seed) {
        let site_dir = dir.join(site.as_str());
        std::fs::create_dir_all(&site_dir)?;
        for (name, bytes) in files {
            let path = site_dir.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}
