//! Loading and splitting the data named in a run config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qvae::data::{load_idx, synth_bars_stripes_labeled, Dataset, SplitManifest};

use crate::config::{DataConfig, DataSource};
use crate::CliResult;

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub manifest: SplitManifest,
}

impl Splits {
    /// Test split if there is one, otherwise validation.
    pub fn held_out(&self) -> &Dataset {
        if self.test.is_empty() {
            &self.val
        } else {
            &self.test
        }
    }
}

pub fn load_all(cfg: &DataConfig) -> CliResult<Dataset> {
    Ok(match cfg.source {
        DataSource::Idx => {
            let images = cfg.images.as_deref().expect("validated: idx source has images");
            load_idx(images, cfg.labels.as_deref(), None)?
        }
        DataSource::BarsStripes => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (images, labels) = synth_bars_stripes_labeled(cfg.side, cfg.examples, &mut rng)?;
            Dataset { images, labels: Some(labels), rows: cfg.side, cols: cfg.side }
        }
    })
}

pub fn load(cfg: &DataConfig) -> CliResult<Splits> {
    let all = load_all(cfg)?;
    let mut manifest = SplitManifest::new(all.len(), cfg.n_val, cfg.n_test, cfg.seed)?;
    if let Some(limit) = cfg.limit {
        manifest.train.truncate(limit);
    }
    Ok(Splits {
        train: all.subset(&manifest.train),
        val: all.subset(&manifest.val),
        test: all.subset(&manifest.test),
        manifest,
    })
}

