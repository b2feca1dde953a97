//! A dataset directory: `manifest.txt` naming the IDX pair and the class
//! split, next to `images.idx` and `labels.idx`.

use std::fs;
use std::path::{Path, PathBuf};

use coopens_core::data::{synth_generate_with, ClassSplit, Dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::idx;
use crate::kv::{self, Entries};

pub const MANIFEST: &str = "manifest.txt";
const IMAGES: &str = "images.idx";
const LABELS: &str = "labels.idx";

const KEYS: &[&str] = &[
    "images",
    "labels",
    "n_classes",
    "train",
    "val",
    "test",
    "seed",
    "per_class",
    "image_size",
    "domain",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub images: String,
    pub labels: String,
    pub n_classes: usize,
    pub split: ClassSplit,
    /// Generator settings for synthetic corpora, kept for provenance.
    pub synth: Option<SynthConfig>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# dataset manifest\n");
        kv::line(&mut out, "images", &self.images);
        kv::line(&mut out, "labels", &self.labels);
        kv::line(&mut out, "n_classes", self.n_classes);
        kv::line(&mut out, "train", kv::join(&self.split.train));
        kv::line(&mut out, "val", kv::join(&self.split.val));
        kv::line(&mut out, "test", kv::join(&self.split.test));
        if let Some(s) = &self.synth {
            kv::line(&mut out, "seed", s.seed);
            kv::line(&mut out, "per_class", s.per_class);
            kv::line(&mut out, "image_size", s.image_size);
            kv::line(&mut out, "domain", s.domain.token());
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let e = Entries::parse(text, path)?;
        if let Some(k) = e.unknown_key(KEYS) {
            return Err(Error::format(path, e.offset(k), format!("unknown manifest key `{k}`")));
        }
        let need = |k: &str| {
            e.get(k)
                .ok_or_else(|| Error::format(path, 0, format!("missing key `{k}`")))
        };
        let list = |k: &str| {
            kv::split_list::<usize>(need(k)?)
                .ok_or_else(|| Error::format(path, e.offset(k), format!("bad class list `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            need(k)?
                .parse()
                .map_err(|_| Error::format(path, e.offset(k), format!("bad integer for `{k}`")))
        };
        let synth = match e.get("seed") {
            None => None,
            Some(seed) => Some(SynthConfig {
                seed: seed
                    .parse()
                    .map_err(|_| Error::format(path, e.offset("seed"), "bad seed"))?,
                n_classes: num("n_classes")?,
                per_class: num("per_class")?,
                image_size: num("image_size")?,
                domain: coopens_core::data::Domain::from_token(need("domain")?)
                    .ok_or_else(|| Error::format(path, e.offset("domain"), "unknown domain"))?,
            }),
        };
        Ok(Manifest {
            images: need("images")?.to_string(),
            labels: need("labels")?.to_string(),
            n_classes: num("n_classes")?,
            split: ClassSplit {
                train: list("train")?,
                val: list("val")?,
                test: list("test")?,
            },
            synth,
        })
    }
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub dataset: Dataset,
}

impl Corpus {
    pub fn split(&self) -> &ClassSplit {
        &self.manifest.split
    }
}

/// Load `dir/manifest.txt` and the IDX pair it names; the split is checked
/// for disjointness against the class count (and for `n_way` test classes).
pub fn load_corpus(dir: &Path, n_way: usize) -> Result<Corpus> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = Manifest::parse(&text, &mpath)?;
    let dataset = idx::load_idx(
        &dir.join(&manifest.images),
        &dir.join(&manifest.labels),
        Some(manifest.n_classes),
    )?;
    manifest.split.validate(manifest.n_classes, n_way)?;
    Ok(Corpus {
        dir: dir.to_path_buf(),
        manifest,
        dataset,
    })
}

/// Write `dataset` with `split` into `dir` (created if missing).
pub fn save_corpus(dir: &Path, dataset: &Dataset, split: &ClassSplit, synth: Option<SynthConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    idx::write_idx(dataset, &dir.join(IMAGES), &dir.join(LABELS))?;
    let manifest = Manifest {
        images: IMAGES.into(),
        labels: LABELS.into(),
        n_classes: dataset.n_classes(),
        split: split.clone(),
        synth,
    };
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))
}

/// Generate a synthetic corpus with the standard split and save it.
pub fn synth_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Dataset> {
    let dataset = synth_generate_with(cfg)?;
    let split = ClassSplit::standard(cfg.n_classes)?;
    save_corpus(dir, &dataset, &split, Some(cfg.clone()))?;
    Ok(dataset)
}
