//! Dataset inventory and the stratified train/val/test partition.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpeg", "jpg", "png"];
const MANIFEST_MAGIC: &str = "#histoconv-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split '{other}' (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_index: usize,
    pub split: Split,
}

/// Fractions assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::invalid(format!("split ratios {all:?} must all be positive")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {all:?} must sum to 1")));
        }
        Ok(())
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    /// Parses `train,val,test`, e.g. `0.8,0.1,0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad ratios '{s}': {e}")))?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::invalid(format!("ratios '{s}' need three values"))),
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

/// Labeled file inventory with its partition assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Lists class subdirectories of `root` in lexicographic order.
pub fn discover_classes(root: &Path) -> Result<Vec<String>> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Dataset(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }
    Ok(classes)
}

/// Inventory of `<root>/<class>/*.{jpeg,jpg,png}`, sorted by path within each class,
/// classes in the given order.
pub fn scan_dataset(root: &Path, classes: &[String]) -> Result<Vec<(PathBuf, usize)>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for (class_index, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let listing = fs::read_dir(&dir).map_err(|e| {
            Error::Dataset(format!("class '{class}' ({}): {e}", dir.display()))
        })?;
        let mut files = Vec::new();
        for entry in listing {
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("skipping unreadable entry in {}: {e}", dir.display());
                    continue;
                }
            };
            let path = entry.path();
            if !has_image_extension(&path) {
                continue;
            }
            match fs::metadata(&path) {
                Ok(m) if m.is_file() => files.push(path),
                Ok(_) => {}
                Err(e) => log::warn!("skipping unreadable file {}: {e}", path.display()),
            }
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class '{class}' has no images in {}",
                dir.display()
            )));
        }
        files.sort();
        out.extend(files.into_iter().map(|p| (p, class_index)));
    }
    Ok(out)
}

/// Per-class counts `(train, val, test)` for a class of `n` items.
pub fn split_counts(n: usize, ratios: &SplitRatios) -> (usize, usize, usize) {
    let mut val = (n as f64 * ratios.val).round() as usize;
    let mut test = (n as f64 * ratios.test).round() as usize;
    // keep at least one training item
    while val + test >= n && (val > 0 || test > 0) {
        if test >= val && test > 0 {
            test -= 1;
        } else {
            val -= 1;
        }
    }
    (n - val - test, val, test)
}

/// Shuffles each class with `seed` and assigns contiguous runs to train, val and test.
pub fn split_stratified(
    entries: &[(PathBuf, usize)],
    classes: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut assigned: Vec<Option<Split>> = vec![None; entries.len()];
    let mut rng: ChaCha8Rng = stream_rng(seed, Stream::Split);
    for (class_index, class) in classes.iter().enumerate() {
        let mut members: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| *c == class_index)
            .map(|(i, _)| i)
            .collect();
        let (n_train, n_val, n_test) = split_counts(members.len(), &ratios);
        if members.is_empty() || n_val == 0 || n_test == 0 {
            log::warn!(
                "class '{class}' has {} entries: split {n_train}/{n_val}/{n_test}",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            assigned[i] = Some(if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    let entries = entries
        .iter()
        .zip(assigned)
        .map(|((path, class_index), split)| {
            let split = split.ok_or_else(|| {
                Error::Dataset(format!(
                    "{} has class index {class_index} outside {} classes",
                    path.display(),
                    classes.len()
                ))
            })?;
            Ok(ManifestEntry {
                path: path.clone(),
                class_index: *class_index,
                split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest {
        classes: classes.to_vec(),
        entries,
        seed,
        ratios,
    })
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `[class][split]` entry counts.
    pub fn class_split_counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0usize; 3]; self.classes.len()];
        for e in &self.entries {
            counts[e.class_index][e.split as usize] += 1;
        }
        counts
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{MANIFEST_MAGIC}\t{MANIFEST_VERSION}").map_err(io)?;
        writeln!(w, "#seed\t{}", self.seed).map_err(io)?;
        writeln!(
            w,
            "#ratios\t{}\t{}\t{}",
            self.ratios.train, self.ratios.val, self.ratios.test
        )
        .map_err(io)?;
        write!(w, "#classes").map_err(io)?;
        for c in &self.classes {
            if c.contains(['\t', '\n']) {
                return Err(Error::invalid(format!("class name {c:?} contains a tab or newline")));
            }
            write!(w, "\t{c}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for e in &self.entries {
            let p = e.path.to_str().ok_or_else(|| {
                Error::invalid(format!("path {} is not valid UTF-8", e.path.display()))
            })?;
            if p.contains(['\t', '\n']) {
                return Err(Error::invalid(format!("path {p:?} contains a tab or newline")));
            }
            writeln!(w, "{p}\t{}\t{}", e.class_index, e.split).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<Vec<String>> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing {key} header")))?;
            let mut fields = line.split('\t');
            if fields.next() != Some(key) {
                return Err(err(no, format!("expected {key} header")));
            }
            Ok(fields.map(str::to_string).collect())
        };
        let version = header(MANIFEST_MAGIC)?;
        if version != [MANIFEST_VERSION.to_string()] {
            return Err(err(1, format!("unsupported manifest version {version:?}")));
        }
        let seed = header("#seed")?
            .first()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| err(2, "bad seed".into()))?;
        let ratios: Vec<f64> = header("#ratios")?
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(3, format!("bad ratios: {e}")))?;
        let ratios = match ratios[..] {
            [a, b, c] => SplitRatios::new(a, b, c).map_err(|e| err(3, e.to_string()))?,
            _ => return Err(err(3, "expected three ratios".into())),
        };
        let classes = header("#classes")?;
        if classes.is_empty() {
            return Err(err(4, "no classes".into()));
        }
        let mut entries = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [p, c, s] = fields[..] else {
                return Err(err(no, "expected path<TAB>class_index<TAB>split".into()));
            };
            let class_index: usize = c
                .parse()
                .map_err(|e| err(no, format!("bad class index '{c}': {e}")))?;
            if class_index >= classes.len() {
                return Err(err(no, format!("class index {class_index} out of range")));
            }
            let split = s.parse::<Split>().map_err(|e| err(no, e.to_string()))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(p),
                class_index,
                split,
            });
        }
        Ok(DatasetManifest {
            classes,
            entries,
            seed,
            ratios,
        })
    }
}
