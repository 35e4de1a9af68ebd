//! A tiny procedural corpus and toy configuration shared by the tests.

#![allow(dead_code)]

use cincgan::config::RunConfig;
use cincgan::dataset::UnpairedSplit;
use cincgan::workflow::{load_split, prepare_data};

pub const TOY: &str = r#"
seed = 21
log_interval = 1

[corpus]
procedural = true
train_count = 8
val_count = 2
size_min = 72
size_max = 96
seed = 4

[split]
lr_indices = [1, 4]
hr_indices = [5, 8]
lr_crop = 18
hr_crop = 72
batch_size = 2

[networks]
generator_channels = 4
generator_resblocks = 1
generator_global_skip = true
discriminator_channels = 2
sr_channels = 4
sr_resblocks = 1
"#;

pub struct Toy {
    pub dir: tempfile::TempDir,
    pub cfg: RunConfig,
    pub split: UnpairedSplit,
}

pub fn toy(overrides: &[&str]) -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let mut o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    o.push(format!("paths.data_root={}", dir.path().join("data").display()));
    o.push(format!("paths.run_dir={}", dir.path().join("run").display()));
    let cfg = RunConfig::from_toml_str(TOY, &o).unwrap();
    prepare_data(&cfg).unwrap();
    let split = load_split(&cfg).unwrap();
    Toy { dir, cfg, split }
}
