use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MANIFEST_HEADER: &str = "sigvwap-params v1";

/// One named array with its gradient and Adam moment slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    /// Buffers (running statistics) are stored and persisted but never optimized.
    pub trainable: bool,
}

impl Parameter {
    fn new(value: Tensor, trainable: bool) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            trainable,
        }
    }
}

/// Ordered, uniquely named collection of every learnable array in a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<(String, Parameter)>,
    index: HashMap<String, usize>,
    /// Number of optimizer steps taken so far.
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_entry(name, value, true)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert_entry(name, value, false)
    }

    fn insert_entry(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), Parameter::new(value, trainable)));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in &mut self.entries {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.len() != grad.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{name}: {} vs {}", p.grad.len(), grad.len()),
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    /// Copies values from `other` for every name they share; shapes must agree.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, p) in &mut self.entries {
            let src = other.get(name)?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load_values_from",
                    format!("{name}: {:?} vs {:?}", src.value.shape(), p.value.shape()),
                ));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    /// Persists as `<stem>.manifest` (text) and `<stem>.bin` (little-endian f64 values).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (manifest, blob) = self.encode();
        let mpath = stem.with_extension("manifest");
        let bpath = stem.with_extension("bin");
        write_atomic(&bpath, &blob)?;
        write_atomic(&mpath, manifest.as_bytes())?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let mpath = stem.with_extension("manifest");
        let bpath = stem.with_extension("bin");
        let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        Self::decode(&manifest, &blob)
    }

    pub fn encode(&self) -> (String, Vec<u8>) {
        let mut manifest = format!("{MANIFEST_HEADER}\nstep {}\n", self.step);
        let mut blob = Vec::new();
        let mut offset = 0usize;
        for (name, p) in &self.entries {
            let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            let kind = if p.trainable { "param" } else { "buffer" };
            manifest.push_str(&format!(
                "{name} {kind} {offset} {} {}\n",
                p.value.len(),
                shape.join("x")
            ));
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += p.value.len();
        }
        (manifest, blob)
    }

    pub fn decode(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Checkpoint(format!("expected header {MANIFEST_HEADER:?}")));
        }
        let step = lines
            .next()
            .and_then(|l| l.strip_prefix("step "))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing step line".into()))?;
        if blob.len() % 8 != 0 {
            return Err(Error::Checkpoint("blob length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut store = ParameterStore { step, ..Self::default() };
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Checkpoint(format!("manifest line {}: {line:?}", ln + 3));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad());
            }
            let offset: usize = fields[2].parse().map_err(|_| bad())?;
            let len: usize = fields[3].parse().map_err(|_| bad())?;
            let shape: Vec<usize> = fields[4]
                .split('x')
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let data = values.get(offset..offset + len).ok_or_else(bad)?.to_vec();
            let tensor = Tensor::new(&shape, data)?;
            match fields[1] {
                "param" => store.insert(fields[0], tensor)?,
                "buffer" => store.insert_buffer(fields[0], tensor)?,
                _ => return Err(bad()),
            }
        }
        Ok(store)
    }
}

/// Writes to a sibling temp file and renames on success.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
        assert!(s.insert("with space", Tensor::zeros(&[1])).is_err());
        assert!(matches!(s.get("b"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]))
            .unwrap();
        s.insert_buffer("bn.mean", Tensor::row(vec![0.1, 0.2])).unwrap();
        s.step = 17;
        let stem = dir.path().join("ckpt");
        s.save(&stem).unwrap();
        let back = ParameterStore::load(&stem).unwrap();
        assert_eq!(back, s);
        assert!(!back.get("bn.mean").unwrap().trainable);
    }

    #[test]
    fn corrupt_manifest_rejected() {
        assert!(ParameterStore::decode("nope\n", &[]).is_err());
        let m = format!("{MANIFEST_HEADER}\nstep 0\nw param 0 4 2x2\n");
        assert!(ParameterStore::decode(&m, &[0u8; 16]).is_err());
    }

    proptest! {
        #[test]
        fn encode_round_trips_bitwise(values in proptest::collection::vec(any::<f64>(), 1..40),
                                      split in 0usize..40) {
            let split = split.min(values.len());
            let mut s = ParameterStore::new();
            s.insert("a", Tensor::row(values[..split].to_vec())).unwrap();
            s.insert("b", Tensor::row(values[split..].to_vec())).unwrap();
            let (m, b) = s.encode();
            let back = ParameterStore::decode(&m, &b).unwrap();
            for name in ["a", "b"] {
                let x: Vec<u64> = s.value(name).unwrap().data().iter().map(|v| v.to_bits()).collect();
                let y: Vec<u64> = back.value(name).unwrap().data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(x, y);
            }
        }
    }
}
