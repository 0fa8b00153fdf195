use qapseg::data::{
    load_dataset, normalize_resize, split, synth_phantoms, DatasetManifest, ManifestEntry, Sample,
    Split,
};

use crate::config::DataConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn get(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> Vec<Sample> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .cloned()
            .collect()
    }
}

fn assign(samples: Vec<(Sample, Option<Split>)>, seed: u64) -> CliResult<Vec<(Sample, Split)>> {
    let assigned = samples.iter().filter(|(_, s)| s.is_some()).count();
    if assigned == samples.len() {
        return Ok(samples
            .into_iter()
            .map(|(s, sp)| (s, sp.unwrap()))
            .collect());
    }
    if assigned != 0 {
        return Err(CliError::config(format!(
            "manifest assigns splits to {assigned} of {} samples; assign all or none",
            samples.len()
        )));
    }
    let manifest = DatasetManifest {
        samples: samples
            .iter()
            .map(|(s, _)| ManifestEntry {
                id: s.id.clone(),
                image: String::new(),
                mask: String::new(),
                split: None,
                scan: None,
            })
            .collect(),
    };
    let m = split(&manifest, seed)?;
    Ok(samples
        .into_iter()
        .zip(m.samples)
        .map(|((s, _), e)| (s, e.split.expect("split assigns every entry")))
        .collect())
}

/// Load or generate the dataset, resize and normalise it, and partition it.
pub fn load_splits(cfg: &DataConfig, seed: u64) -> CliResult<Splits> {
    let raw: Vec<(Sample, Option<Split>)> = match (&cfg.synthetic, &cfg.manifest) {
        (Some(n), None) => synth_phantoms(*n, cfg.size.max(32), seed)
            .into_iter()
            .map(|s| (s, None))
            .collect(),
        (None, Some(path)) => load_dataset(path)?,
        _ => {
            return Err(CliError::config(
                "exactly one of synthetic or manifest must be set",
            ))
        }
    };
    let mut out = Splits::default();
    for (s, sp) in assign(raw, seed)? {
        let s = normalize_resize(&s, cfg.size, cfg.normalization)?;
        match sp {
            Split::Train => out.train.push(s),
            Split::Val => out.val.push(s),
            Split::Test => out.test.push(s),
        }
    }
    Ok(out)
}
