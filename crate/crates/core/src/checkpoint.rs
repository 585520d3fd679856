//! `RIKD-CKPT v1` text checkpoints.
//!
//! ```text
//! RIKD-CKPT v1
//! role=tagger
//! scalar=f64
//! key=value ...
//! tensor <name> <rows> <cols>
//! <row-major values, one matrix row per line>
//! ```
//!
//! Values are printed in scientific notation with the scalar type's
//! round-trip digit count (17 significant digits for `f64`).

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

pub const HEADER: &str = "RIKD-CKPT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    meta: Vec<(String, String)>,
    tensors: Vec<NamedTensor<T>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(role: &str) -> Self {
        Self { meta: vec![("role".into(), role.into()), ("scalar".into(), T::NAME.into())], tensors: Vec::new() }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        assert!(!key.contains(['=', '\n']) && !value.contains('\n'), "unrepresentable metadata {key:?}");
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key.into(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse_meta<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key).ok_or_else(|| bad(format!("missing metadata key {key}")))?;
        raw.parse().map_err(|_| bad(format!("bad value {raw:?} for {key}")))
    }

    pub fn expect_role(&self, role: &str) -> Result<()> {
        match self.meta("role") {
            Some(r) if r == role => Ok(()),
            other => Err(bad(format!("expected role {role}, found {other:?}"))),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix<T>) {
        self.tensors.push(NamedTensor { name: name.into(), rows: m.rows(), cols: m.cols(), data: m.as_slice().to_vec() });
    }

    pub fn push_vector(&mut self, name: &str, v: &[T]) {
        self.tensors.push(NamedTensor { name: name.into(), rows: 1, cols: v.len(), data: v.to_vec() });
    }

    pub fn tensors(&self) -> &[NamedTensor<T>] {
        &self.tensors
    }

    fn find(&self, name: &str, rows: usize, cols: usize) -> Result<&NamedTensor<T>> {
        let t = self.tensors.iter().find(|t| t.name == name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(bad(format!("tensor {name} is {}x{}, expected {rows}x{cols}", t.rows, t.cols)));
        }
        Ok(t)
    }

    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix<T>> {
        Ok(Matrix::from_vec(rows, cols, self.find(name, rows, cols)?.data.clone()))
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<T>> {
        Ok(self.find(name, 1, len)?.data.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("{k}={v}\n"));
        }
        for t in &self.tensors {
            out.push_str(&format!("tensor {} {} {}\n", t.name, t.rows, t.cols));
            for row in t.data.chunks(t.cols.max(1)) {
                let line: Vec<String> = row.iter().map(|v| format!("{:.*e}", T::DIGITS - 1, *v)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad(format!("missing {HEADER:?} header")));
        }
        let mut ckpt = Self { meta: Vec::new(), tensors: Vec::new() };
        let mut pending: Option<NamedTensor<T>> = None;
        for line in lines {
            if let Some(t) = pending.as_mut() {
                if t.data.len() < t.rows * t.cols {
                    for tok in line.split_whitespace() {
                        t.data.push(tok.parse().map_err(|_| bad(format!("bad value {tok:?} in {}", t.name)))?);
                    }
                    continue;
                }
            }
            if let Some(header) = line.strip_prefix("tensor ") {
                if let Some(t) = pending.take() {
                    ckpt.finish_tensor(t)?;
                }
                let parts: Vec<&str> = header.split_whitespace().collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(bad(format!("bad tensor header {line:?}")));
                };
                let dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad dimension {s:?}")));
                let (rows, cols) = (dim(rows)?, dim(cols)?);
                pending = Some(NamedTensor { name: name.into(), rows, cols, data: Vec::with_capacity(rows * cols) });
            } else if pending.is_none() {
                let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad metadata line {line:?}")))?;
                ckpt.meta.push((k.into(), v.into()));
            } else if !line.trim().is_empty() {
                return Err(bad(format!("unexpected line {line:?}")));
            }
        }
        if let Some(t) = pending.take() {
            ckpt.finish_tensor(t)?;
        }
        if let Some(s) = ckpt.meta("scalar") {
            if s != T::NAME {
                return Err(bad(format!("checkpoint holds {s} values, expected {}", T::NAME)));
            }
        }
        Ok(ckpt)
    }

    fn finish_tensor(&mut self, t: NamedTensor<T>) -> Result<()> {
        if t.data.len() != t.rows * t.cols {
            return Err(bad(format!("tensor {} has {} values, expected {}", t.name, t.data.len(), t.rows * t.cols)));
        }
        self.tensors.push(t);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_header_and_short_tensor() {
        assert!(Checkpoint::<f64>::parse("nope\n").is_err());
        let text = "RIKD-CKPT v1\nrole=x\ntensor a 2 2\n1 2\n3\n";
        assert!(Checkpoint::<f64>::parse(text).is_err());
    }

    #[test]
    fn rejects_wrong_scalar_type() {
        let mut c = Checkpoint::<f32>::new("tagger");
        c.push_vector("v", &[1.5]);
        assert!(Checkpoint::<f64>::parse(&c.to_text()).is_err());
    }

    proptest! {
        #[test]
        fn doubles_round_trip_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut c = Checkpoint::<f64>::new("tagger");
            c.set_meta("k", 3);
            c.push_vector("v", &values);
            let text = c.to_text();
            let back = Checkpoint::<f64>::parse(&text).unwrap();
            prop_assert_eq!(back.vector("v", values.len()).unwrap(), values);
            prop_assert_eq!(back.to_text(), text);
        }

        #[test]
        fn floats_round_trip_exactly(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut c = Checkpoint::<f32>::new("policy");
            c.push_vector("v", &values);
            let back = Checkpoint::<f32>::parse(&c.to_text()).unwrap();
            prop_assert_eq!(back.vector("v", values.len()).unwrap(), values);
        }
    }
}
