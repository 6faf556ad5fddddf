//! Versioned model bundles stored as canonical JSON.
//!
//! Canonical form: object keys sorted, reals rendered as the shortest decimal
//! that round-trips, two-space indentation, trailing newline. Every model
//! carries a SHA-256 digest of its own compact canonical form (with the
//! `content_hash` key omitted), which is recomputed and checked on load.
//!
//! The file layout is documented field by field in the book chapter on
//! persistence.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::LevelModel;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub format_version: u64,
    pub created_at: DateTime<Utc>,
    /// Description of the data the models were trained on (generator config,
    /// ingestion paths, ...). Free-form JSON.
    pub fingerprint: Value,
    /// One model per hierarchy level, finest first.
    pub models: Vec<LevelModel>,
}

impl ModelBundle {
    pub fn new(models: Vec<LevelModel>, fingerprint: Value, created_at: DateTime<Utc>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            created_at,
            fingerprint,
            models,
        }
    }

    pub fn model(&self, level: &str) -> Option<&LevelModel> {
        self.models.iter().find(|m| m.level_name == level)
    }

    pub fn level_names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.level_name.as_str()).collect()
    }
}

fn real(x: f64) -> Value {
    // Models only ever hold finite reals.
    Value::Number(Number::from_f64(x).expect("finite real"))
}

fn reals(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(real).collect())
}

fn model_fields(model: &LevelModel) -> Map<String, Value> {
    let d = model.feature_names.len();
    let basis_row_major: Vec<f64> = (0..d)
        .flat_map(|i| model.basis.iter().map(move |u| u[i]))
        .collect();
    let mut m = Map::new();
    m.insert("level_name".into(), Value::String(model.level_name.clone()));
    m.insert(
        "feature_names".into(),
        Value::Array(
            model
                .feature_names
                .iter()
                .cloned()
                .map(Value::String)
                .collect(),
        ),
    );
    m.insert("col_means".into(), reals(&model.col_means));
    m.insert("basis_u".into(), reals(&basis_row_major));
    m.insert("singular_values".into(), reals(&model.singular_values));
    m.insert("rank".into(), Value::from(model.rank));
    m.insert("threshold".into(), real(model.threshold));
    m.insert(
        "train_residual_mean".into(),
        real(model.train_residual_mean),
    );
    m.insert("train_residual_std".into(), real(model.train_residual_std));
    m.insert("version".into(), Value::String(model.version.clone()));
    m
}

/// SHA-256 hex digest of the model's compact canonical form, excluding `content_hash`.
pub fn model_hash(model: &LevelModel) -> String {
    let mut bytes = String::new();
    write_canonical(&Value::Object(model_fields(model)), None, 0, &mut bytes);
    hex::encode(Sha256::digest(bytes.as_bytes()))
}

fn bundle_value(bundle: &ModelBundle) -> Value {
    let models = bundle
        .models
        .iter()
        .map(|model| {
            let mut m = model_fields(model);
            m.insert(
                "content_hash".into(),
                Value::String(model.content_hash.clone()),
            );
            Value::Object(m)
        })
        .collect();
    let mut top = Map::new();
    top.insert("format_version".into(), Value::from(bundle.format_version));
    top.insert(
        "created_at".into(),
        Value::String(bundle.created_at.to_rfc3339_opts(SecondsFormat::Secs, true)),
    );
    top.insert("fingerprint".into(), bundle.fingerprint.clone());
    top.insert("models".into(), Value::Array(models));
    Value::Object(top)
}

/// The exact text [`save_bundle`] writes.
pub fn to_canonical_string(bundle: &ModelBundle) -> String {
    let mut out = String::new();
    write_canonical(&bundle_value(bundle), Some(2), 0, &mut out);
    out.push('\n');
    out
}

fn write_canonical(v: &Value, indent: Option<usize>, depth: usize, out: &mut String) {
    let newline = |out: &mut String, depth: usize| {
        if let Some(width) = indent {
            out.push('\n');
            out.extend(std::iter::repeat_n(' ', width * depth));
        }
    };
    match v {
        Value::Array(items) if !items.is_empty() => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                write_canonical(item, indent, depth + 1, out);
            }
            newline(out, depth);
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, depth + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_canonical(&map[key], indent, depth + 1, out);
            }
            newline(out, depth);
            out.push('}');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Writes the bundle atomically (temp file in the same directory, then rename).
pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let text = to_canonical_string(bundle);
    write_atomic(path, text.as_bytes())
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let storage = |source| Error::Storage {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| storage(std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(storage)
}

/// Reads a bundle and verifies every model's content hash.
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).map_err(|source| Error::Storage {
        path: path.to_path_buf(),
        source,
    })?;
    parse_bundle(&text)
}

pub fn parse_bundle(text: &str) -> Result<ModelBundle> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let top = Fields::new(&doc, "$")?;
    let format_version = top.u64("format_version")?;
    if format_version != FORMAT_VERSION {
        return Err(Error::Version(format_version));
    }
    let created_raw = top.str("created_at")?;
    let created_at = DateTime::parse_from_rfc3339(created_raw)
        .map_err(|e| top.err("created_at", e.to_string()))?
        .with_timezone(&Utc);
    let fingerprint = top.get("fingerprint")?.clone();
    let models = top
        .array("models")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse_model(v, &format!("$.models[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelBundle {
        format_version,
        created_at,
        fingerprint,
        models,
    })
}

fn parse_model(v: &Value, at: &str) -> Result<LevelModel> {
    let f = Fields::new(v, at)?;
    let feature_names = f
        .array("feature_names")?
        .iter()
        .map(|n| n.as_str().map(str::to_owned))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| f.err("feature_names", "expected strings"))?;
    let d = feature_names.len();
    let rank = f.u64("rank")? as usize;
    let col_means = f.reals("col_means")?;
    let flat = f.reals("basis_u")?;
    let singular_values = f.reals("singular_values")?;
    if col_means.len() != d {
        return Err(f.err("col_means", format!("expected {d} entries")));
    }
    if flat.len() != d * rank {
        return Err(f.err(
            "basis_u",
            format!("expected {d}x{rank} = {} entries", d * rank),
        ));
    }
    if singular_values.len() != rank {
        return Err(f.err("singular_values", format!("expected {rank} entries")));
    }
    let basis = (0..rank)
        .map(|j| (0..d).map(|i| flat[i * rank + j]).collect())
        .collect();
    let model = LevelModel {
        level_name: f.str("level_name")?.to_owned(),
        feature_names,
        col_means,
        basis,
        singular_values,
        rank,
        threshold: f.real("threshold")?,
        train_residual_mean: f.real("train_residual_mean")?,
        train_residual_std: f.real("train_residual_std")?,
        version: f.str("version")?.to_owned(),
        content_hash: f.str("content_hash")?.to_owned(),
    };
    let computed = model_hash(&model);
    if computed != model.content_hash {
        return Err(Error::Integrity {
            level: model.level_name,
            stored: model.content_hash,
            computed,
        });
    }
    Ok(model)
}

/// Field accessor that reports JSON-path locations on failure.
struct Fields<'a> {
    map: &'a Map<String, Value>,
    at: &'a str,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, at: &'a str) -> Result<Self> {
        match v {
            Value::Object(map) => Ok(Self { map, at }),
            _ => Err(Error::Parse {
                location: at.to_owned(),
                message: "expected an object".into(),
            }),
        }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            location: format!("{}.{key}", self.at),
            message: message.into(),
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.map
            .get(key)
            .ok_or_else(|| self.err(key, "missing field"))
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| self.err(key, "expected a string"))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| self.err(key, "expected a non-negative integer"))
    }

    fn real(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| self.err(key, "expected a number"))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| self.err(key, "expected an array"))
    }

    fn reals(&self, key: &str) -> Result<Vec<f64>> {
        self.array(key)?
            .iter()
            .map(Value::as_f64)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.err(key, "expected an array of numbers"))
    }
}
