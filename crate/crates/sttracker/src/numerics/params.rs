use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{NumericsError, Result, Tensor};

/// Named map of trainable tensors. Keys are dot-separated paths.
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
    seed: u64,
    rng: ChaCha8Rng,
}

const MAGIC: &[u8; 4] = b"STTK";
const VERSION: u32 = 1;

impl ParameterSet {
    pub fn new(seed: u64) -> ParameterSet {
        ParameterSet {
            params: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a parameter drawn uniformly from [-s, s], s = 1/sqrt(fan_in).
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        if self.params.contains_key(name) {
            return Err(NumericsError::Contract(format!("duplicate parameter {name}")));
        }
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-s..=s)).collect();
        let t = Tensor::parameter(shape, data)?;
        self.params.insert(name.to_string(), t.clone());
        Ok(t)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(NumericsError::Contract(format!("duplicate parameter {name}")));
        }
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| NumericsError::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Replace a parameter's values with a fresh leaf tensor. Old graphs keep
    /// their reference to the previous tensor.
    pub fn update(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let shape = self.get(name)?.shape().to_vec();
        let t = Tensor::parameter(&shape, data)?;
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Deep copy; the copy shares no tensors with the original.
    pub fn deep_clone(&self) -> ParameterSet {
        let mut out = ParameterSet::new(self.seed);
        for (name, t) in &self.params {
            let copy = Tensor::parameter(t.shape(), t.data().to_vec()).expect("finite params");
            out.params.insert(name.clone(), copy);
        }
        out
    }

    pub fn perturbed(&self, name: &str, index: usize, delta: f64) -> Result<ParameterSet> {
        let mut out = self.deep_clone();
        let mut data = out.get(name)?.data().to_vec();
        data[index] += delta;
        out.update(name, data)?;
        Ok(out)
    }

    // ---- checkpoint format ----
    // magic "STTK", version u32, count u32; per entry: name length u16,
    // UTF-8 name, rank u8, extents u32 each, raw little-endian f64 data.

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.shape().len() as u8);
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)
    }

    pub fn load(path: &Path) -> std::io::Result<ParameterSet> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn from_bytes(bytes: &[u8]) -> std::result::Result<ParameterSet, String> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> std::result::Result<&[u8], String> {
            if *pos + n > bytes.len() {
                return Err("truncated checkpoint".into());
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let mut out = ParameterSet::new(0);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| "invalid parameter name")?;
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut pos, n * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::parameter(&shape, data).map_err(|e| e.to_string())?;
            if out.params.insert(name.clone(), t).is_some() {
                return Err(format!("duplicate parameter {name}"));
            }
        }
        if pos != bytes.len() {
            return Err("trailing bytes in checkpoint".into());
        }
        Ok(out)
    }
}
