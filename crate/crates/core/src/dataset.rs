//! On-disk datasets: DGF1 images plus a CSV manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{Image2D, ImagePair, Mask, PairMeta, Task};
use crate::io::{read_image, write_image};
use crate::phantom::{derive_seed, make_dataset};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "id,split,task,degradation,seed,input,guide,label,mask";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split `{s}`")))
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// A pair with its identifier and split.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub pair: ImagePair,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<ImagePair> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.pair.clone())
            .collect()
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.clone())
            .collect()
    }
}

/// Phantom seed of a split: every split draws from its own seed stream.
pub fn split_seed(base: u64, split: Split) -> u64 {
    derive_seed(base, 0x5_0000 + split.index())
}

/// Generates the three splits described by `cfg` in memory.
pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let mut samples = Vec::new();
    for split in Split::ALL {
        let n = match split {
            Split::Train => cfg.n_train,
            Split::Val => cfg.n_val,
            Split::Test => cfg.n_test,
        };
        let spec = cfg.phantom.with_seed(split_seed(cfg.phantom.seed, split));
        let noise = cfg.noise.map(|n| n.with_seed(split_seed(n.seed, split)));
        let pairs = make_dataset(&spec, cfg.task, noise.as_ref(), n)?;
        for (k, pair) in pairs.into_iter().enumerate() {
            samples.push(Sample {
                id: format!("{}_{k:03}", split.as_str()),
                split,
                pair,
            });
        }
    }
    Ok(Dataset { samples })
}

fn mask_image(m: &Mask) -> Image2D {
    m.to_image()
}

/// Writes every sample as four DGF1 files and a manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in &ds.samples {
        let names = ["input", "guide", "label", "mask"].map(|k| format!("{}_{k}.dgf", s.id));
        let p = &s.pair;
        for (name, img) in names.iter().zip([&p.input, &p.guide, &p.ground_truth, &mask_image(&p.mask)]) {
            write_image(img, dir.join(name))?;
        }
        writeln!(
            manifest,
            "{},{},{},{},{},{},{},{},{}",
            s.id,
            s.split.as_str(),
            p.meta.task.as_str(),
            p.meta.degradation,
            p.meta.seed,
            names[0],
            names[1],
            names[2],
            names[3]
        )
        .unwrap();
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::format(0, format!("{}: unexpected manifest header", path.display())));
    }
    let mut samples = Vec::new();
    let mut offset = MANIFEST_HEADER.len() as u64 + 1;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::format(offset, "manifest row needs 9 fields"));
        }
        let seed = f[4]
            .parse()
            .map_err(|_| Error::format(offset, format!("bad seed `{}`", f[4])))?;
        let mask_img = read_image(dir.join(f[8]))?;
        let mask = Mask::from_fn(mask_img.width(), mask_img.height(), |x, y| mask_img.get(x, y) > 0.5);
        let pair = ImagePair {
            input: read_image(dir.join(f[5]))?,
            guide: read_image(dir.join(f[6]))?,
            ground_truth: read_image(dir.join(f[7]))?,
            mask,
            meta: PairMeta {
                task: Task::parse(f[2])?,
                degradation: f[3].to_string(),
                seed,
            },
        };
        pair.validate()?;
        samples.push(Sample {
            id: f[0].to_string(),
            split: Split::parse(f[1])?,
            pair,
        });
        offset += line.len() as u64 + 1;
    }
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load() {
        let mut cfg = RunConfig::defaults(Task::SuperResolution);
        cfg.phantom.size = 32;
        cfg.n_train = 2;
        cfg.n_val = 1;
        cfg.n_test = 1;
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.ids(Split::Train), vec!["train_000", "train_001"]);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.pair.mask, b.pair.mask);
            assert!(a.pair.ground_truth.max_abs_diff(&b.pair.ground_truth) < 1e-7);
        }
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn splits_use_distinct_phantoms() {
        let cfg = RunConfig::defaults(Task::Denoising);
        let ds = generate(&cfg).unwrap();
        let train: Vec<u64> = ds.samples.iter().filter(|s| s.split == Split::Train).map(|s| s.pair.meta.seed).collect();
        assert!(ds
            .samples
            .iter()
            .filter(|s| s.split != Split::Train)
            .all(|s| !train.contains(&s.pair.meta.seed)));
    }
}
