//! Reference descriptors for the public benchmark scenes.

use std::path::{Path, PathBuf};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "AFNET_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnownDataset {
    /// Short key used on the command line and in file names.
    pub key: &'static str,
    pub display_name: &'static str,
    /// Table abbreviation (IP, PU, SA, BS).
    pub abbrev: &'static str,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub class_count: usize,
    pub labeled_samples: usize,
    pub sensor: &'static str,
    /// Commonly used download location; nothing is fetched automatically.
    pub url: &'static str,
}

pub const INDIAN_PINES: KnownDataset = KnownDataset {
    key: "indian_pines",
    display_name: "Indian Pines",
    abbrev: "IP",
    height: 145,
    width: 145,
    bands: 220,
    class_count: 16,
    labeled_samples: 10249,
    sensor: "AVIRIS",
    url: "https://www.ehu.eus/ccwintco/index.php/Hyperspectral_Remote_Sensing_Scenes",
};

pub const PAVIA_UNIVERSITY: KnownDataset = KnownDataset {
    key: "pavia_university",
    display_name: "Pavia University",
    abbrev: "PU",
    height: 610,
    width: 340,
    bands: 103,
    class_count: 9,
    labeled_samples: 42776,
    sensor: "ROSIS-03",
    url: "https://www.ehu.eus/ccwintco/index.php/Hyperspectral_Remote_Sensing_Scenes",
};

pub const SALINAS: KnownDataset = KnownDataset {
    key: "salinas",
    display_name: "Salinas",
    abbrev: "SA",
    height: 512,
    width: 217,
    bands: 224,
    class_count: 16,
    labeled_samples: 54129,
    sensor: "AVIRIS",
    url: "https://www.ehu.eus/ccwintco/index.php/Hyperspectral_Remote_Sensing_Scenes",
};

pub const BOTSWANA: KnownDataset = KnownDataset {
    key: "botswana",
    display_name: "Botswana",
    abbrev: "BS",
    height: 1476,
    width: 256,
    bands: 145,
    class_count: 14,
    labeled_samples: 3248,
    sensor: "Hyperion (EO-1)",
    url: "https://www.ehu.eus/ccwintco/index.php/Hyperspectral_Remote_Sensing_Scenes",
};

pub const ALL: [KnownDataset; 4] = [INDIAN_PINES, PAVIA_UNIVERSITY, SALINAS, BOTSWANA];

/// Water-absorption bands (1-based, inclusive) dropped from Salinas.
pub const SALINAS_REMOVED_BANDS: &[usize] = &[
    108, 109, 110, 111, 112, 154, 155, 156, 157, 158, 159, 160, 161, 162, 163, 164, 165, 166, 167,
    224,
];

/// Finds a dataset by key, display name or abbreviation (case-insensitive).
pub fn lookup(name: &str) -> Option<&'static KnownDataset> {
    let n = name.to_ascii_lowercase().replace([' ', '-'], "_");
    ALL.iter().find(|d| {
        d.key == n || d.abbrev.eq_ignore_ascii_case(name) || d.display_name.eq_ignore_ascii_case(name)
    })
}

/// Paths of the cube and label containers for `name` under `root`:
/// `<root>/<name>.hsij` and `<root>/<name>_gt.hsij`.
pub fn container_paths(root: &Path, name: &str) -> (PathBuf, PathBuf) {
    let key = lookup(name).map(|d| d.key).unwrap_or(name);
    (
        root.join(format!("{key}.hsij")),
        root.join(format!("{key}_gt.hsij")),
    )
}

/// The dataset root from `AFNET_DATA_DIR`, if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_accepts_aliases() {
        assert_eq!(lookup("IP").unwrap().key, "indian_pines");
        assert_eq!(lookup("Indian Pines").unwrap().labeled_samples, 10249);
        assert_eq!(lookup("pavia_university").unwrap().class_count, 9);
        assert_eq!(lookup("SA").unwrap().labeled_samples, 54129);
        assert!(lookup("pavia_center").is_none());
    }

    #[test]
    fn salinas_removed_band_list() {
        assert_eq!(SALINAS_REMOVED_BANDS.len(), 20);
        assert_eq!(SALINAS.bands - SALINAS_REMOVED_BANDS.len(), 204);
    }

    #[test]
    fn container_paths_use_canonical_key() {
        let (c, g) = container_paths(Path::new("/d"), "IP");
        assert_eq!(c, Path::new("/d/indian_pines.hsij"));
        assert_eq!(g, Path::new("/d/indian_pines_gt.hsij"));
    }
}
