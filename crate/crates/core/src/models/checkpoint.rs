//! Plain-text parameter files.
//!
//! ```text
//! # daml parameter file
//! schema_version 1
//! family tgmm
//! meta n_sites 7
//! array mu_raw 2 : 3.2 4.7
//! array pi_raw 7x2 : ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so writing and
//! re-reading a file reproduces every bit, and equal parameters always
//! produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{GenerativeModel, ParamBlock};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamFile {
    pub family: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<NamedArray>,
}

impl ParamFile {
    /// Splits `model`'s parameter vector into its named blocks.
    pub fn from_model(model: &dyn GenerativeModel) -> Self {
        let phi = model.params();
        let mut offset = 0;
        let arrays = model
            .param_blocks()
            .into_iter()
            .map(|ParamBlock { name, shape }| {
                let len: usize = shape.iter().product();
                let values = phi[offset..offset + len].to_vec();
                offset += len;
                NamedArray { name: name.to_string(), shape, values }
            })
            .collect();
        ParamFile { family: model.family().to_string(), meta: BTreeMap::new(), arrays }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push_array(&mut self, name: &str, values: &[f64]) {
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape: vec![values.len()],
            values: values.to_vec(),
        });
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    /// Gathers the parameter vector for `model`'s block layout and loads it.
    pub fn load_into(&self, model: &mut dyn GenerativeModel) -> Result<()> {
        if self.family != model.family() {
            return Err(Error::invalid(format!(
                "parameter file is for family '{}', model is '{}'",
                self.family,
                model.family()
            )));
        }
        let mut phi = Vec::with_capacity(model.n_params());
        for block in model.param_blocks() {
            let arr = self
                .array(block.name)
                .ok_or_else(|| Error::invalid(format!("parameter file lacks array '{}'", block.name)))?;
            if arr.shape != block.shape {
                return Err(Error::shape(format!(
                    "array '{}' has shape {:?}, model expects {:?}",
                    block.name, arr.shape, block.shape
                )));
            }
            phi.extend(&arr.values);
        }
        model.set_params(&phi)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# daml parameter file\n");
        let _ = writeln!(out, "schema_version {SCHEMA_VERSION}");
        let _ = writeln!(out, "family {}", self.family);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for arr in &self.arrays {
            let shape: Vec<String> = arr.shape.iter().map(usize::to_string).collect();
            let _ = write!(out, "array {} {} :", arr.name, shape.join("x"));
            for v in &arr.values {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {line}: {msg}"),
        };
        let mut file = ParamFile::default();
        let mut saw_version = false;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (tag, rest) = line.split_once(' ').ok_or_else(|| err(n, "missing value"))?;
            match tag {
                "schema_version" => {
                    let v: u32 = rest.trim().parse().map_err(|_| err(n, "bad schema version"))?;
                    if v != SCHEMA_VERSION {
                        return Err(err(n, &format!("unsupported schema version {v}")));
                    }
                    saw_version = true;
                }
                "family" => file.family = rest.trim().to_string(),
                "meta" => {
                    let (k, v) = rest.split_once(' ').ok_or_else(|| err(n, "meta needs key and value"))?;
                    file.meta.insert(k.to_string(), v.trim().to_string());
                }
                "array" => {
                    let (head, body) = rest.split_once(':').ok_or_else(|| err(n, "array needs ':'"))?;
                    let mut head = head.split_whitespace();
                    let name = head.next().ok_or_else(|| err(n, "array needs a name"))?;
                    let shape_txt = head.next().ok_or_else(|| err(n, "array needs a shape"))?;
                    let shape = shape_txt
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(n, "bad shape"))?;
                    let values = body
                        .split_whitespace()
                        .map(str::parse::<f64>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err(n, "bad number"))?;
                    if values.len() != shape.iter().product::<usize>() {
                        return Err(err(n, &format!("array '{name}' has {} values for shape {shape_txt}", values.len())));
                    }
                    file.arrays.push(NamedArray { name: name.to_string(), shape, values });
                }
                other => return Err(err(n, &format!("unknown record '{other}'"))),
            }
        }
        if !saw_version {
            return Err(err(0, "missing schema_version"));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}
