//! Data preparation and loading shared by the command line and the tests.

use crate::config::RunConfig;
use crate::dataset::{build_unpaired_split, list_eval_set, EvalPair, UnpairedSplit};
use crate::degradation::{degrade_corpus, Manifest};
use crate::error::{Error, Result};
use crate::synth::write_procedural_corpus;

/// Builds the training and validation corpora under `paths.data_root`.
///
/// With `corpus.procedural` the HR images are synthesised first; otherwise
/// `hr/` and `val/hr/` must already hold PNGs. The validation set is degraded
/// with the seed offset by one so its kernels differ from the training set's.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Manifest, Manifest)> {
    let scale = cfg.degradation.scale as usize;
    let c = &cfg.corpus;
    if c.procedural {
        for (dir, count, seed) in [
            (cfg.train_hr_dir(), c.train_count, c.seed),
            (cfg.val_hr_dir(), c.val_count, c.seed.wrapping_add(1)),
        ] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_procedural_corpus(&dir, count, seed, (c.size_min, c.size_max), scale)?;
        }
    }
    let train = degrade_corpus(&cfg.train_hr_dir(), &cfg.degradation, &cfg.train_lr_dir())?;
    let mut val_cfg = cfg.degradation.clone();
    val_cfg.seed = val_cfg.seed.wrapping_add(1);
    let val = degrade_corpus(&cfg.val_hr_dir(), &val_cfg, &cfg.val_lr_dir())?;
    Ok((train, val))
}

/// The unpaired training split described by `cfg.split`.
pub fn load_split(cfg: &RunConfig) -> Result<UnpairedSplit> {
    build_unpaired_split(
        &cfg.train_lr_dir(),
        &cfg.train_hr_dir(),
        cfg.split.lr_range(),
        cfg.split.hr_range(),
        cfg.split.lr_crop,
        cfg.degradation.scale as usize,
    )
}

/// Validation inputs paired with their ground truth.
pub fn load_val_pairs(cfg: &RunConfig) -> Result<Vec<EvalPair>> {
    list_eval_set(&cfg.val_lr_dir(), Some(&cfg.val_hr_dir()))
}
