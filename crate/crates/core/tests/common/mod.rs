#![allow(dead_code)]

use std::path::Path;

use sac_core::harness::Config;
use sac_core::synthdata::{generate_dataset, load_manifest, Dataset, DatasetSpec};

pub fn tiny_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        groups: 2,
        siblings: 2,
        images_per_class: 6,
        image_size: 16,
        seed,
        nuisance: true,
    }
}

pub fn tiny_data(dir: &Path) -> Dataset {
    let m = generate_dataset(&tiny_spec(0), dir).unwrap();
    load_manifest(&m.path).unwrap()
}

/// Small enough that a full epoch takes milliseconds.
pub fn tiny_config() -> Config {
    let mut c = Config::desk();
    for (k, v) in [
        ("k", "2"),
        ("channels", "4,8"),
        ("pooled_blocks", "1"),
        ("d_v", "8"),
        ("d_e", "6"),
        ("d_j", "5"),
        ("word_dim", "4"),
        ("epochs", "2"),
        ("batch_size", "4"),
    ] {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}
