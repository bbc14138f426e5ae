//! On-disk dataset layout:
//!
//! ```text
//! <root>/<subcategory>/<shape>.off
//! <root>/<subcategory>/<shape>.lbl
//! <root>/train.txt      relative .off paths, one per line
//! <root>/test.txt
//! ```
//!
//! Class indices follow the sorted order of subcategory names over both
//! splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::mesh::Mesh;
use super::off::{load_off, write_off};
use super::synth::{generate_shape, FamilyKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Test => "test.txt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeEntry {
    /// Relative path without extension, e.g. `chair_lowback/shape_003`.
    pub id: String,
    pub path: PathBuf,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub train: Vec<ShapeEntry>,
    pub test: Vec<ShapeEntry>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let read = |split: Split| -> Result<Vec<String>> {
            let p = root.join(split.file_name());
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        };
        let (train, test) = (read(Split::Train)?, read(Split::Test)?);
        let mut classes = BTreeSet::new();
        for rel in train.iter().chain(&test) {
            let class = rel
                .split('/')
                .next()
                .filter(|c| !c.is_empty() && rel.contains('/'))
                .ok_or_else(|| Error::Data(format!("split entry `{rel}` is not <subcategory>/<shape>.off")))?;
            classes.insert(class.to_string());
        }
        let classes: Vec<String> = classes.into_iter().collect();
        let entries = |rels: Vec<String>| {
            rels.into_iter()
                .map(|rel| {
                    let class_name = rel.split('/').next().unwrap_or_default();
                    ShapeEntry {
                        id: rel.trim_end_matches(".off").to_string(),
                        path: root.join(&rel),
                        class: classes.iter().position(|c| c == class_name).expect("collected above"),
                    }
                })
                .collect()
        };
        Ok(Dataset {
            root: root.to_path_buf(),
            train: entries(train),
            test: entries(test),
            classes,
        })
    }

    pub fn split(&self, split: Split) -> &[ShapeEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &ShapeEntry> {
        self.train.iter().chain(&self.test)
    }
}

impl ShapeEntry {
    pub fn load_mesh(&self) -> Result<Mesh> {
        load_off(&self.path)
    }
}

/// Seed of shape `index` in subcategory `sub`, derived from the dataset seed
/// with a splitmix64 step.
pub fn shape_seed(dataset_seed: u64, sub: usize, index: usize) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + ((sub as u64) << 20) + index as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes `per_subcategory` shapes of each subcategory of `kind`. The last
/// `round(per_subcategory * test_fraction)` shapes of each subcategory form
/// the test split.
pub fn generate_dataset(
    root: &Path,
    kind: FamilyKind,
    per_subcategory: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if per_subcategory == 0 || !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "need shapes per subcategory > 0 and test fraction in [0, 1), got {per_subcategory} and {test_fraction}"
        )));
    }
    let n_test = (per_subcategory as f64 * test_fraction).round() as usize;
    let mut train = String::new();
    let mut test = String::new();
    for fam in kind.subcategories() {
        let dir = root.join(fam.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_subcategory {
            let mesh = generate_shape(&fam, shape_seed(seed, fam.subcategory, i));
            let rel = format!("{}/shape_{i:03}.off", fam.name);
            write_off(&mesh, &root.join(&rel))?;
            let list = if i + n_test >= per_subcategory { &mut test } else { &mut train };
            list.push_str(&rel);
            list.push('\n');
        }
    }
    for (split, text) in [(Split::Train, train), (Split::Test, test)] {
        let p = root.join(split.file_name());
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Dataset::load(root)
}
