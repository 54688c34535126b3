//! Per-class object size priors.
//!
//! File format (UTF-8 JSON):
//!
//! ```json
//! {
//!   "bottle": {"dims": [{"mean_m": 0.24, "std_m": 0.04},
//!                       {"mean_m": 0.07, "std_m": 0.012},
//!                       {"mean_m": 0.07, "std_m": 0.012}]}
//! }
//! ```
//!
//! Every class carries exactly three dimensions. They are stored sorted by
//! descending mean and paired positionally with an object's sorted
//! dimensions. Unknown keys are ignored with a warning.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("class '{class}': {message}")]
    Validation { class: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Gaussian over one physical dimension, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionPrior {
    #[serde(rename = "mean_m")]
    pub mean: f64,
    #[serde(rename = "std_m")]
    pub std: f64,
}

impl DimensionPrior {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }

    fn check(&self) -> Result<(), String> {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return Err(format!("mean must be positive, got {}", self.mean));
        }
        if !(self.std.is_finite() && self.std > 0.0) {
            return Err(format!("std must be positive, got {}", self.std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub class_name: String,
    /// Sorted descending by mean.
    pub dims: [DimensionPrior; 3],
}

impl SizePrior {
    /// Validates and sorts the dimensions.
    pub fn new(class_name: impl Into<String>, dims: [DimensionPrior; 3]) -> Result<Self, PriorError> {
        let class_name = class_name.into();
        for d in &dims {
            d.check().map_err(|message| PriorError::Validation {
                class: class_name.clone(),
                message,
            })?;
        }
        let mut dims = dims;
        dims.sort_by(|a, b| b.mean.total_cmp(&a.mean));
        Ok(Self { class_name, dims })
    }

    pub fn means(&self) -> [f64; 3] {
        [self.dims[0].mean, self.dims[1].mean, self.dims[2].mean]
    }
}

/// Immutable map from class name to prior. Lookups are exact and
/// case-sensitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorRepository {
    classes: BTreeMap<String, SizePrior>,
}

#[derive(Serialize)]
struct DimsEntry<'a> {
    dims: &'a [DimensionPrior; 3],
}

impl PriorRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_priors(priors: impl IntoIterator<Item = SizePrior>) -> Self {
        let classes = priors
            .into_iter()
            .map(|p| (p.class_name.clone(), p))
            .collect();
        Self { classes }
    }

    pub fn insert(&mut self, prior: SizePrior) {
        self.classes.insert(prior.class_name.clone(), prior);
    }

    pub fn lookup(&self, class_name: &str) -> Option<&SizePrior> {
        self.classes.get(class_name)
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.classes.contains_key(class_name)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Class names in sorted order.
    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SizePrior> {
        self.classes.values()
    }

    /// Parses the JSON prior format, returning the repository and any
    /// warnings about ignored keys.
    pub fn parse(text: &str, origin: &str) -> Result<(Self, Vec<String>), PriorError> {
        let root: Value = serde_json::from_str(text).map_err(|e| PriorError::Parse {
            path: origin.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let obj = root.as_object().ok_or_else(|| PriorError::Parse {
            path: origin.to_string(),
            line: 1,
            message: "top level must be an object mapping class name to prior".into(),
        })?;

        let mut warnings = Vec::new();
        let mut repo = PriorRepository::new();
        for (class, entry) in obj {
            let fail = |message: String| PriorError::Parse {
                path: origin.to_string(),
                line: line_of_key(text, class),
                message: format!("class '{class}': {message}"),
            };
            let entry = entry
                .as_object()
                .ok_or_else(|| fail("entry must be an object".into()))?;
            for key in entry.keys().filter(|k| *k != "dims") {
                warnings.push(format!("class '{class}': ignoring unknown key '{key}'"));
            }
            let dims = entry
                .get("dims")
                .and_then(Value::as_array)
                .ok_or_else(|| fail("missing 'dims' array".into()))?;
            if dims.len() != 3 {
                return Err(fail(format!("'dims' must hold exactly 3 entries, found {}", dims.len())));
            }
            let mut parsed = [DimensionPrior::new(0.0, 0.0); 3];
            for (i, d) in dims.iter().enumerate() {
                let d = d
                    .as_object()
                    .ok_or_else(|| fail(format!("dims[{i}] must be an object")))?;
                let field = |name: &str| {
                    d.get(name)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| fail(format!("dims[{i}].{name} must be a number")))
                };
                parsed[i] = DimensionPrior::new(field("mean_m")?, field("std_m")?);
                for key in d.keys().filter(|k| *k != "mean_m" && *k != "std_m") {
                    warnings.push(format!("class '{class}': dims[{i}]: ignoring unknown key '{key}'"));
                }
            }
            repo.insert(SizePrior::new(class.clone(), parsed)?);
        }
        Ok((repo, warnings))
    }

    /// Normalized JSON text: classes sorted by name, dimensions sorted
    /// descending, two-space indentation, trailing newline.
    pub fn to_json_string(&self) -> String {
        let map: BTreeMap<&str, DimsEntry<'_>> = self
            .classes
            .iter()
            .map(|(k, v)| (k.as_str(), DimsEntry { dims: &v.dims }))
            .collect();
        let mut s = serde_json::to_string_pretty(&map).expect("prior map serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PriorError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| PriorError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn line_of_key(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map_or(1, |i| i + 1)
}

/// Loads a prior file, logging a warning for each ignored key.
pub fn load_priors(path: impl AsRef<Path>) -> Result<PriorRepository, PriorError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PriorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (repo, warnings) = PriorRepository::parse(&text, &path.display().to_string())?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(repo)
}

/// Illustrative sample priors for common indoor classes and "car".
///
/// These numbers are rough, hand-picked sizes meant for demos and tests.
/// They are not survey statistics.
pub fn builtin_sample_priors() -> PriorRepository {
    #[rustfmt::skip]
    const TABLE: &[(&str, [(f64, f64); 3])] = &[
        ("book",         [(0.24, 0.04),  (0.17, 0.03),  (0.03, 0.012)]),
        ("bottle",       [(0.24, 0.04),  (0.07, 0.012), (0.07, 0.012)]),
        ("bowl",         [(0.16, 0.03),  (0.16, 0.03),  (0.07, 0.015)]),
        ("car",          [(4.30, 0.40),  (1.75, 0.10),  (1.55, 0.12)]),
        ("cell phone",   [(0.15, 0.012), (0.075, 0.006),(0.009, 0.002)]),
        ("chair",        [(0.90, 0.10),  (0.50, 0.06),  (0.48, 0.06)]),
        ("cup",          [(0.11, 0.02),  (0.085, 0.012),(0.085, 0.012)]),
        ("keyboard",     [(0.44, 0.03),  (0.14, 0.015), (0.03, 0.008)]),
        ("laptop",       [(0.34, 0.03),  (0.24, 0.02),  (0.025, 0.006)]),
        ("monitor",      [(0.55, 0.08),  (0.42, 0.06),  (0.20, 0.05)]),
        ("mouse",        [(0.11, 0.01),  (0.065, 0.008),(0.04, 0.006)]),
        ("potted plant", [(0.40, 0.12),  (0.25, 0.07),  (0.25, 0.07)]),
        ("teddy bear",   [(0.35, 0.10),  (0.25, 0.07),  (0.18, 0.05)]),
        ("tv",           [(1.00, 0.20),  (0.60, 0.12),  (0.10, 0.04)]),
    ];
    PriorRepository::from_priors(TABLE.iter().map(|(name, dims)| {
        SizePrior::new(
            *name,
            dims.map(|(mean, std)| DimensionPrior::new(mean, std)),
        )
        .expect("built-in priors are valid")
    }))
}
