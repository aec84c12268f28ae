//! Plain-text `key = value` run configuration. Command-line flags override file values;
//! the resolved result is written to every run directory.

use std::path::{Path, PathBuf};

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::model::TrainConfig;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset root holding one sub-directory per class.
    pub data: Option<PathBuf>,
    /// Class directory names in label order; empty means every sub-directory, sorted.
    pub classes: Vec<String>,
    pub ratios: SplitRatios,
    /// Existing manifest to train from instead of scanning `data`.
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            classes: Vec::new(),
            ratios: SplitRatios::default(),
            manifest: None,
            out: PathBuf::from("runs/run"),
            train: TrainConfig::default(),
        }
    }
}

pub fn parse_classes(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "classes" => self.classes = parse_classes(value),
            "ratios" => {
                self.ratios = value
                    .parse()
                    .map_err(|e| Error::invalid(format!("ratios = {value}: {e}")))?
            }
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            other => return self.train.set(other, value),
        }
        Ok(true)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, path)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, "expected key = value".into()))?;
            match self.set(k.trim(), v.trim()) {
                Ok(true) => {}
                Ok(false) => return Err(err(i + 1, format!("unknown key '{}'", k.trim()))),
                Err(e) => return Err(err(i + 1, e.to_string())),
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.data {
            out.push_str(&format!("data = {}\n", d.display()));
        }
        if !self.classes.is_empty() {
            out.push_str(&format!("classes = {}\n", self.classes.join(",")));
        }
        out.push_str(&format!("ratios = {}\n", self.ratios));
        if let Some(m) = &self.manifest {
            out.push_str(&format!("manifest = {}\n", m.display()));
        }
        out.push_str(&format!("out = {}\n", self.out.display()));
        out.push_str(&self.train.to_text());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_override() {
        let text = "data = ./lc/lung\nclasses = lung_aca, lung_n ,lung_scc\nepochs = 5 # short\nlr=0.001\n";
        let mut cfg = RunConfig::parse(text, Path::new("c.txt")).unwrap();
        assert_eq!(cfg.classes, ["lung_aca", "lung_n", "lung_scc"]);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.optimizer.learning_rate, 1e-3);
        cfg.set("epochs", "7").unwrap();
        let back = RunConfig::parse(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.train.epochs, 7);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("epochs = 2\nbogus = 1\n", Path::new("c.txt"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("c.txt:2"), "{err}");
        let err = RunConfig::parse("\nepochs = two\n", Path::new("c.txt"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("c.txt:2"), "{err}");
        assert!(RunConfig::parse("ratios = 0.5,0.5,0.5", Path::new("c")).is_err());
    }
}
