use std::collections::BTreeSet;

use fabric_core::domain::{RepoPath, SiteId, WorkflowConfig};
use fabric_core::repo::{validate_config, ConfigContext};
use fabric_fixtures::assets::fixtures_root;
use fabric_fixtures::generate::{earth_records, shbe_data, EarthSpec, ShbeSpec, REGIONS};
use fabric_fixtures::oracle::{least_squares, standalone_loop};
use fabric_fixtures::{generate_datasets, write_datasets, ALL};

#[test]
fn seed_42_twice_is_byte_identical() {
    assert_eq!(generate_datasets(42), generate_datasets(42));
    assert_ne!(generate_datasets(42), generate_datasets(43));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a = write_datasets(a.path(), 42).unwrap();
    write_datasets(b.path(), 42).unwrap();
    assert_eq!(files_a.len(), 4);
    for f in files_a {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
    }
}

#[test]
fn shbe_shards_partition_the_rows() {
    let spec = ShbeSpec::default();
    let data = shbe_data(7, &spec);
    assert_eq!(data.shards.len(), 3);
    let total: usize = data.shards.values().map(Vec::len).sum();
    assert_eq!(total, spec.total_rows);
    let union: BTreeSet<usize> = data.shards.values().flatten().copied().collect();
    assert_eq!(union.len(), spec.total_rows, "shards overlap");
    for (site, ids) in &data.shards {
        let csv = String::from_utf8(data.shard_csv(site)).unwrap();
        assert_eq!(csv.lines().count(), ids.len() + 1);
        // Every value parses back to the exact generated float.
        for (line, id) in csv.lines().skip(1).zip(ids) {
            let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            let r = data.rows[*id];
            assert_eq!(f, vec![r.row_id as f64, r.illuminance, r.occupancy, r.switch_prob]);
        }
    }
    assert!(data.shard_csv(&SiteId::new("nowhere")).starts_with(b"row_id"));
}

#[test]
fn earth_year_has_twelve_records_per_region_cell() {
    let spec = EarthSpec::default();
    let records = earth_records(42, &spec);
    for model in &spec.models {
        for (region, ..) in REGIONS {
            for cell in 0..spec.cells_per_region {
                let months: Vec<u32> = records
                    .iter()
                    .filter(|r| &r.model == model && r.region == region && r.cell == cell && r.year == 2050)
                    .map(|r| r.month)
                    .collect();
                assert_eq!(months, (1..=12).collect::<Vec<_>>(), "{model} {region} {cell}");
            }
        }
    }
    assert!(records.iter().all(|r| r.pr >= 0.0));
    let years = (spec.last_year - spec.first_year + 1) as usize;
    assert_eq!(records.len(), spec.models.len() * REGIONS.len() * spec.cells_per_region * years * 12);
}

#[test]
fn fixture_tree_mirrors_repository_paths_and_configs_validate() {
    for wf in ALL {
        let version = RepoPath::parse(wf.version_path).unwrap();
        let dir = fixtures_root().join(wf.version_path.trim_start_matches('/'));
        let on_disk: BTreeSet<String> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| !n.starts_with("__"))
            .collect();
        let shipped: BTreeSet<String> = wf.files.iter().map(|f| f.name.to_string()).collect();
        assert_eq!(on_disk, shipped, "{}", wf.version_path);
        for f in wf.files {
            assert!(RepoPath::parse(&format!("{version}/{}", f.name)).is_ok());
            assert_eq!(std::fs::read_to_string(dir.join(f.name)).unwrap(), f.contents);
        }
        let ctx = ConfigContext {
            scripts: shipped.iter().filter(|n| *n != WorkflowConfig::FILE_NAME).cloned().collect(),
            sites: wf.sites.iter().map(|s| SiteId::new(*s)).collect(),
        };
        let config = validate_config(wf.file("conf.yml").unwrap().as_bytes(), &ctx).unwrap();
        assert_eq!(config, wf.config());
        assert_eq!(wf.config_path(), format!("{}/conf.yml", wf.version_path));
    }
}

#[test]
fn oracle_loop_converges_to_least_squares_and_ground_truth() {
    let spec = ShbeSpec::default();
    let data = shbe_data(42, &spec);
    let exact = least_squares(&data.rows);
    for (b, t) in exact.iter().zip(spec.coefficients) {
        assert!((b - t).abs() < 1e-2, "{exact:?}");
    }
    let out = standalone_loop(&data.rows, 0.5, 25, 1e-3);
    assert!(out.iterations <= 25);
    assert!(out.losses.windows(2).all(|w| w[1] <= w[0]), "loss never increases");
    for (b, t) in out.beta.iter().zip(spec.coefficients) {
        assert!((b - t).abs() < 1e-2, "{:?}", out.beta);
    }
    // A full step lands on the exact solution in one update.
    let one = standalone_loop(&data.rows, 1.0, 1, 0.0);
    for (b, e) in one.beta.iter().zip(exact) {
        assert!((b - e).abs() < 1e-9);
    }
    assert_eq!(standalone_loop(&data.rows, 0.5, 3, 0.0).iterations, 3);
}
