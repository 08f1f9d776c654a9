//! Text container for tensors and metadata.
//!
//! ```text
//! LPAD-CKPT-1
//! meta <key> <value to end of line>
//! tensor <kind> <name> <d0>x<d1>... <v0> <v1> ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every 64-bit value exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const HEADER: &str = "LPAD-CKPT-1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, String, Tensor)>,
}

impl Checkpoint {
    pub fn push_meta(&mut self, key: &str, value: impl Into<String>) {
        self.meta.push((key.to_string(), value.into()));
    }

    pub fn push_tensor(&mut self, kind: &str, name: &str, t: Tensor) {
        self.tensors.push((kind.to_string(), name.to_string(), t));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensors_of<'a>(
        &'a self,
        kind: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.tensors
            .iter()
            .filter(move |(k, _, _)| k == kind)
            .map(|(_, n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, kind: &str, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(k, n, _)| k == kind && n == name)
            .map(|(_, _, t)| t)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {}", v.replace('\n', " "));
        }
        for (kind, name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let dims = if dims.is_empty() {
                "scalar".to_string()
            } else {
                dims.join("x")
            };
            let _ = write!(s, "tensor {kind} {name} {dims}");
            for v in t.data() {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HEADER => {}
            _ => return Err(Error::parse(Some(1), format!("missing header '{HEADER}'"))),
        }
        let mut ck = Checkpoint::default();
        let mut ended = false;
        for (i, line) in lines {
            let lineno = Some(i + 1);
            if line.trim() == "end" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_ascii_whitespace();
                let (Some(kind), Some(name), Some(dims)) =
                    (parts.next(), parts.next(), parts.next())
                else {
                    return Err(Error::parse(lineno, "truncated tensor record"));
                };
                let shape: Vec<usize> = if dims == "scalar" {
                    vec![]
                } else {
                    dims.split('x')
                        .map(|d| {
                            d.parse()
                                .map_err(|_| Error::parse(lineno, format!("bad extent '{d}'")))
                        })
                        .collect::<Result<_>>()?
                };
                let data: Vec<f64> = parts
                    .map(|v| {
                        v.parse()
                            .map_err(|_| Error::parse(lineno, format!("bad value '{v}'")))
                    })
                    .collect::<Result<_>>()?;
                let t =
                    Tensor::new(shape, data).map_err(|e| Error::parse(lineno, e.to_string()))?;
                ck.tensors.push((kind.to_string(), name.to_string(), t));
            } else if !line.trim().is_empty() {
                return Err(Error::parse(lineno, "unrecognized record"));
            }
        }
        if !ended {
            return Err(Error::parse(None, "missing 'end' record (truncated file?)"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut ck = Checkpoint::default();
        ck.push_meta("spec", "{\"a\": 1}");
        ck.push_tensor(
            "param",
            "w",
            Tensor::new(vec![2, 2], vec![0.1, -1e-300, 1.0 / 3.0, 5e17]).unwrap(),
        );
        ck.push_tensor("state", "step", Tensor::scalar(7.0));
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_wrong_header_and_truncation() {
        assert!(Checkpoint::from_text("LPAD-CKPT-0\nend\n").is_err());
        assert!(Checkpoint::from_text("LPAD-CKPT-1\ntensor param w 2 1.0 2.0\n").is_err());
        assert!(Checkpoint::from_text("LPAD-CKPT-1\ntensor param w 3 1.0 2.0\nend\n").is_err());
    }
}
