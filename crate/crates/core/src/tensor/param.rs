use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Graph, Scalar, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VG4DCKPT";

/// A named model weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub trainable: bool,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
}

impl<T> Parameter<T> {
    /// A trainable, weight-decayed parameter.
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> Self {
        Self {
            name: name.into(),
            shape,
            values,
            trainable: true,
            decay: true,
        }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, p: Parameter<T>) -> Result<usize> {
        if self.index.contains_key(&p.name) {
            return Err(Error::Argument(format!("duplicate parameter name {}", p.name)));
        }
        if p.shape.iter().product::<usize>() != p.values.len() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?} but {} values",
                p.name,
                p.shape,
                p.values.len()
            )));
        }
        let id = self.params.len();
        self.index.insert(p.name.clone(), id);
        self.params.push(p);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_id(&self, id: usize) -> &Parameter<T> {
        &self.params[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Parameter<T> {
        &mut self.params[id]
    }

    /// Total number of scalar weights.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    /// Places every parameter on `g` as a gradient-receiving leaf. The
    /// returned handles are in store order.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| g.variable(&p.shape, p.values.clone()))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    trainable: p.trainable,
                    decay: p.decay,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for &d in &p.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in &p.values {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Restores values saved by [`ParamStore::write_checkpoint`] into a store
    /// with the same names and shapes. Flags are kept from `self`.
    pub fn load_values(&mut self, bytes: &[u8]) -> Result<()> {
        let loaded = read_checkpoint(bytes)?;
        if loaded.len() != self.params.len() {
            return Err(Error::format(
                bytes.len() as u64,
                format!(
                    "checkpoint has {} parameters, model has {}",
                    loaded.len(),
                    self.params.len()
                ),
            ));
        }
        for (name, shape, values) in loaded {
            let p = self
                .get_mut(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint parameter {name} not in model")))?;
            if p.shape != shape {
                return Err(Error::Dimension(format!(
                    "checkpoint parameter {name} has shape {shape:?}, model expects {:?}",
                    p.shape
                )));
            }
            p.values = values.into_iter().map(|v| T::from_f64(v as f64)).collect();
        }
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        self.load_values(&bytes)
    }
}

/// Entries of a checkpoint file: `(name, shape, values)`.
pub type CheckpointEntry = (String, Vec<usize>, Vec<f32>);

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut cur = crate::io::ByteCursor::new(bytes);
    let magic = cur.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let mut out = Vec::new();
    while !cur.is_empty() {
        let name_len = cur.u32()? as usize;
        let at = cur.offset();
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(cur.f32()?);
        }
        out.push((name, shape, values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert(Parameter {
            name: "w".into(),
            shape: vec![2, 3],
            values: vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.25],
            trainable: true,
            decay: true,
        })
        .unwrap();
        s.insert(Parameter {
            name: "b".into(),
            shape: vec![3],
            values: vec![0.5, 0.25, 0.125],
            trainable: true,
            decay: false,
        })
        .unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        let dup = s.get("w").unwrap().clone();
        assert!(s.insert(dup).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = store();
        let mut bytes = Vec::new();
        s.write_checkpoint(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        // name length prefix of "w"
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        let mut t = store();
        t.iter_mut().for_each(|p| p.values.iter_mut().for_each(|v| *v = 0.0));
        t.load_values(&bytes).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let s = store();
        let mut bytes = Vec::new();
        s.write_checkpoint(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        match read_checkpoint(&bytes) {
            Err(Error::Format { offset, .. }) => assert!(offset > 8),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
