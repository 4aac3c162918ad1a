//! Sectioned `key = value` configuration files.
//!
//! ```text
//! # comment
//! [grid]
//! extent = 0,1;0,1
//! cells = 16
//! [operator]
//! s = 0.5
//! ```
//!
//! Every key must be consumed by the command that reads the file; leftovers
//! are reported as unknown keys.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use fracshape::{BoxGrid, SetMask};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    used: RefCell<BTreeSet<(String, String)>>,
    base_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let no = no + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(format!("line {no}: unterminated section header")))?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(config_err(format!("line {no}: invalid section name '{name}'")));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {no}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(config_err(format!("line {no}: empty key")));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| config_err(format!("line {no}: key '{key}' outside any section")))?;
            let entries = sections.get_mut(section).expect("section exists");
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(config_err(format!("line {no}: duplicate key '{section}.{key}'")));
            }
        }
        Ok(Self {
            sections,
            used: RefCell::default(),
            base_dir: PathBuf::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        let value = self.sections.get(section)?.get(key)?;
        self.used.borrow_mut().insert((section.to_string(), key.to_string()));
        Some(value.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, CliError> {
        self.get(section, key)
            .ok_or_else(|| config_err(format!("missing required key '{section}.{key}'")))
    }

    pub fn parse_value<T: ParseValue>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        self.get(section, key)
            .map(|v| T::parse_value(v).map_err(|e| config_err(format!("{section}.{key}: {e}"))))
            .transpose()
    }

    pub fn value_or<T: ParseValue>(&self, section: &str, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn resolve_path(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Errors on any key that no reader asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .sections
            .iter()
            .flat_map(|(s, kv)| kv.keys().map(move |k| (s.clone(), k.clone())))
            .filter(|sk| !used.contains(sk))
            .map(|(s, k)| format!("{s}.{k}"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(config_err(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

/// Locale-independent scalar and list parsing.
pub trait ParseValue: Sized {
    fn parse_value(text: &str) -> Result<Self, String>;
}

impl ParseValue for f64 {
    fn parse_value(text: &str) -> Result<Self, String> {
        let v: f64 = text.trim().parse().map_err(|_| format!("'{text}' is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("'{text}' is not finite"))
        }
    }
}

impl ParseValue for usize {
    fn parse_value(text: &str) -> Result<Self, String> {
        text.trim().parse().map_err(|_| format!("'{text}' is not a non-negative integer"))
    }
}

impl ParseValue for u64 {
    fn parse_value(text: &str) -> Result<Self, String> {
        text.trim().parse().map_err(|_| format!("'{text}' is not a non-negative integer"))
    }
}

impl ParseValue for bool {
    fn parse_value(text: &str) -> Result<Self, String> {
        match text.trim() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(format!("'{other}' is not a boolean")),
        }
    }
}

impl ParseValue for String {
    fn parse_value(text: &str) -> Result<Self, String> {
        Ok(text.trim().to_string())
    }
}

impl<T: ParseValue> ParseValue for Vec<T> {
    fn parse_value(text: &str) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        text.split(',').map(T::parse_value).collect()
    }
}

/// Grid description as written in `[grid]`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: Vec<(f64, f64)>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn from_config(cfg: &RawConfig) -> Result<Self, CliError> {
        let extent_text = cfg.require("grid", "extent")?;
        let extent = extent_text
            .split(';')
            .map(|pair| {
                let v = Vec::<f64>::parse_value(pair).map_err(|e| config_err(format!("grid.extent: {e}")))?;
                match v[..] {
                    [a, b] => Ok((a, b)),
                    _ => Err(config_err(format!("grid.extent: '{pair}' must be 'lower,upper'"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dim = cfg.value_or("grid", "dim", extent.len())?;
        if dim != extent.len() {
            return Err(config_err(format!("grid.dim = {dim} but {} extent pairs given", extent.len())));
        }
        let cells: Vec<usize> = cfg
            .parse_value("grid", "cells")?
            .ok_or_else(|| config_err("missing required key 'grid.cells'"))?;
        let spec = Self { dim, extent, cells };
        spec.build()?;
        Ok(spec)
    }

    pub fn build(&self) -> Result<BoxGrid, CliError> {
        Ok(BoxGrid::new(self.dim, &self.extent, &self.cells)?)
    }
}

/// Where a mask comes from (`[mask]` or `[mask_b]`).
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    File { path: String },
    Ball { center: Vec<f64>, radius: f64 },
    Rect { bounds: Vec<(f64, f64)> },
    Full,
}

impl MaskSource {
    /// Reads the section; `Ok(None)` when it is absent or empty.
    pub fn from_config(cfg: &RawConfig, section: &str) -> Result<Option<Self>, CliError> {
        let file = cfg.get(section, "file");
        let center = cfg.parse_value::<Vec<f64>>(section, "ball_center")?;
        let radius = cfg.parse_value::<f64>(section, "ball_radius")?;
        let rect = cfg.get(section, "rect");
        let full = cfg.value_or(section, "full", false)?;
        let mut found = Vec::new();
        if let Some(path) = file {
            found.push(MaskSource::File {
                path: cfg.resolve_path(path).to_string_lossy().into_owned(),
            });
        }
        match (center, radius) {
            (Some(center), Some(radius)) => found.push(MaskSource::Ball { center, radius }),
            (None, None) => {}
            _ => return Err(config_err(format!("{section}: ball_center and ball_radius go together"))),
        }
        if let Some(text) = rect {
            let bounds = text
                .split(';')
                .map(|pair| match Vec::<f64>::parse_value(pair).map_err(config_err)?[..] {
                    [a, b] => Ok((a, b)),
                    _ => Err(config_err(format!("{section}.rect: '{pair}' must be 'lower,upper'"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            found.push(MaskSource::Rect { bounds });
        }
        if full {
            found.push(MaskSource::Full);
        }
        match found.len() {
            0 => Ok(None),
            1 => Ok(found.pop()),
            _ => Err(config_err(format!("{section}: more than one mask source given"))),
        }
    }

    pub fn build(&self, grid: &BoxGrid) -> Result<SetMask, CliError> {
        let mask = match self {
            MaskSource::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("cannot read mask file {path}: {e}")))?;
                let mask: SetMask = text.parse()?;
                if !mask.on_grid(grid) {
                    return Err(config_err(format!("mask file {path} was written for a different grid")));
                }
                mask
            }
            MaskSource::Ball { center, radius } => {
                if center.len() != grid.dim() {
                    return Err(config_err("ball_center has the wrong dimension"));
                }
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(config_err("ball_radius must be positive"));
                }
                SetMask::ball(grid, center, *radius)
            }
            MaskSource::Rect { bounds } => {
                if bounds.len() != grid.dim() {
                    return Err(config_err("rect has the wrong dimension"));
                }
                SetMask::rect(grid, bounds)
            }
            MaskSource::Full => SetMask::full(grid),
        };
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_lists() {
        let cfg = RawConfig::parse("# c\n[grid]\nextent = 0,1;0,2\ncells = 4,8\n\n[operator]\ns = 0.5\n").unwrap();
        let g = GridSpec::from_config(&cfg).unwrap();
        assert_eq!(g.dim, 2);
        assert_eq!(g.extent, vec![(0.0, 1.0), (0.0, 2.0)]);
        assert_eq!(cfg.parse_value::<f64>("operator", "s").unwrap(), Some(0.5));
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let cfg = RawConfig::parse("[grid]\nextent = 0,1\ncells = 4\ncolour = red\n").unwrap();
        GridSpec::from_config(&cfg).unwrap();
        let err = cfg.finish().unwrap_err().to_string();
        assert!(err.contains("grid.colour"), "{err}");
        assert!(RawConfig::parse("s = 1\n").is_err());
        assert!(RawConfig::parse("[a]\nx = 1\nx = 2\n").is_err());
        assert!(RawConfig::parse("[a\n").is_err());
        assert!(RawConfig::parse("[a]\njunk\n").is_err());
        let cfg = RawConfig::parse("[operator]\ns = 0,5\n").unwrap();
        assert!(cfg.parse_value::<f64>("operator", "s").is_err());
        let cfg = RawConfig::parse("[grid]\nextent = 0,1\ncells = 3.5\n").unwrap();
        assert!(GridSpec::from_config(&cfg).is_err());
    }

    #[test]
    fn mask_sources() {
        let cfg = RawConfig::parse("[mask]\nball_center = 0.5\nball_radius = 0.26\n[mask_b]\nfull = true\nrect = 0,1\n").unwrap();
        let grid = BoxGrid::interval(0.0, 1.0, 8).unwrap();
        let m = MaskSource::from_config(&cfg, "mask").unwrap().unwrap();
        assert_eq!(m.build(&grid).unwrap().indices(), vec![2, 3, 4, 5]);
        assert!(MaskSource::from_config(&cfg, "mask_b").is_err());
        assert_eq!(MaskSource::from_config(&cfg, "absent").unwrap(), None);
        let cfg = RawConfig::parse("[mask]\nball_center = 0.5\n").unwrap();
        assert!(MaskSource::from_config(&cfg, "mask").is_err());
    }
}
