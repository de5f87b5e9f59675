//! Named parameter storage and its on-disk checkpoint form.
//!
//! A checkpoint directory holds one DCT1 file per tensor and a
//! `manifest.txt`:
//!
//! ```text
//! # dcscan checkpoint
//! meta route_set HV
//! meta embed_dim 8
//! param enc.w_in 8,16 enc.w_in.dct1
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_dct1, write_dct1, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a leaf; the result is indexed by [`ParamId`].
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Registers every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Overwrites values from another store with the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid("parameter layouts differ"));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::shape("copy_from", dst.shape(), src.shape()));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Writes `manifest.txt` plus one DCT1 file per parameter into `dir`.
    pub fn save(&self, dir: &Path, meta: &[(String, String)]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("# dcscan checkpoint\n");
        for (k, v) in meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, value) in self.names.iter().zip(&self.values) {
            let file = format!("{name}.dct1");
            write_dct1(value, dir.join(&file))?;
            let shape: Vec<String> = value.shape().iter().map(|e| e.to_string()).collect();
            let shape = if shape.is_empty() { "-".to_string() } else { shape.join(",") };
            manifest.push_str(&format!("param {name} {shape} {file}\n"));
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Reads a checkpoint directory; returns the store and its `meta` entries.
    pub fn load(dir: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut store = ParamStore::new();
        let mut meta = BTreeMap::new();
        let mut offset = 0;
        for line in text.lines() {
            let here = offset;
            offset += line.len() + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::Format {
                path: path.clone(),
                offset: here,
                msg: msg.to_string(),
            };
            match fields.as_slice() {
                [] => {}
                [first, ..] if first.starts_with('#') => {}
                ["meta", key, rest @ ..] => {
                    meta.insert(key.to_string(), rest.join(" "));
                }
                ["param", name, shape, file] => {
                    let shape: Vec<usize> = if shape.is_empty() || *shape == "-" {
                        vec![]
                    } else {
                        shape
                            .split(',')
                            .map(|s| s.parse().map_err(|_| bad("bad extent")))
                            .collect::<Result<_>>()?
                    };
                    let t = read_dct1(dir.join(file))?;
                    if t.shape() != shape.as_slice() {
                        return Err(bad(&format!("{name}: file shape {:?} vs manifest {shape:?}", t.shape())));
                    }
                    store.add(*name, t);
                }
                _ => return Err(bad("unrecognized manifest line")),
            }
        }
        Ok((store, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::from_fn([2, 3], |i| i as f64 * 0.1));
        s.add("b", Tensor::scalar(-1.5));
        s.save(dir.path(), &[("route_set".into(), "DA".into())]).unwrap();
        let (back, meta) = ParamStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(meta["route_set"], "DA");
        let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(text.contains("param a.w 2,3 a.w.dct1"));
    }
}
