//! The fixture workflows shipped under `fixtures/`, laid out by repository
//! path so the tree can be uploaded as-is.

use std::path::PathBuf;

use fabric_core::domain::WorkflowConfig;
use fabric_core::repo::parse_config;

pub struct FixtureFile {
    pub name: &'static str,
    pub contents: &'static str,
}

pub struct FixtureWorkflow {
    /// Version directory, e.g. `/shared/earth/extract/v1`.
    pub version_path: &'static str,
    pub files: &'static [FixtureFile],
    /// Sites the use case is registered on.
    pub sites: &'static [&'static str],
}

macro_rules! fixture_file {
    ($dir:literal, $name:literal) => {
        FixtureFile {
            name: $name,
            contents: include_str!(concat!("../../../fixtures", $dir, "/", $name)),
        }
    };
}

pub const EARTH_EXTRACT: FixtureWorkflow = FixtureWorkflow {
    version_path: "/shared/earth/extract/v1",
    files: &[
        fixture_file!("/shared/earth/extract/v1", "conf.yml"),
        fixture_file!("/shared/earth/extract/v1", "extract.py"),
    ],
    sites: &["siteA"],
};

pub const EARTH_SUMMARY: FixtureWorkflow = FixtureWorkflow {
    version_path: "/shared/earth/summary/v1",
    files: &[
        fixture_file!("/shared/earth/summary/v1", "conf.yml"),
        fixture_file!("/shared/earth/summary/v1", "summarize.py"),
    ],
    sites: &["siteA"],
};

pub const LIGHT_SWITCH: FixtureWorkflow = FixtureWorkflow {
    version_path: "/shared/lsu_ann1/light_switch/v1",
    files: &[
        fixture_file!("/shared/lsu_ann1/light_switch/v1", "conf.yml"),
        fixture_file!("/shared/lsu_ann1/light_switch/v1", "shbe.py"),
        fixture_file!("/shared/lsu_ann1/light_switch/v1", "init.py"),
        fixture_file!("/shared/lsu_ann1/light_switch/v1", "refine.py"),
        fixture_file!("/shared/lsu_ann1/light_switch/v1", "aggregate.py"),
    ],
    sites: &["siteA", "siteB", "siteC"],
};

pub const ALL: [&FixtureWorkflow; 3] = [&EARTH_EXTRACT, &EARTH_SUMMARY, &LIGHT_SWITCH];

impl FixtureWorkflow {
    fn segment(&self, n: usize) -> &'static str {
        self.version_path.split('/').nth(n).expect("version path has four segments")
    }

    pub fn use_case(&self) -> &'static str {
        self.segment(2)
    }

    pub fn workflow_path(&self) -> &'static str {
        let cut = self.version_path.rfind('/').expect("version path");
        &self.version_path[..cut]
    }

    pub fn config_path(&self) -> String {
        format!("{}/{}", self.version_path, WorkflowConfig::FILE_NAME)
    }

    pub fn file(&self, name: &str) -> Option<&'static str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.contents)
    }

    pub fn config(&self) -> WorkflowConfig {
        parse_config(self.file(WorkflowConfig::FILE_NAME).expect("conf.yml").as_bytes())
            .expect("fixture configs parse")
    }
}

/// The on-disk `fixtures/` tree in the source checkout.
pub fn fixtures_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
