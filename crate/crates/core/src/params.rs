//! Named parameter storage and the checkpoint archive.
//!
//! Archive layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "FUSURV01"
//! count    u64
//! entry*   name_len u32 | name (UTF-8) | trainable u8 | ndim u32 |
//!          extents u64 * ndim | payload f64 * prod(extents)
//! ```
//!
//! Entries are written in name order, so equal stores give equal files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FUSURV01";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.params.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Entries whose name starts with `prefix`, prefix kept.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies every entry of `other` over this store.
    pub fn extend(&mut self, other: &ParamStore) {
        for (k, v) in &other.params {
            self.params.insert(k.clone(), v.clone());
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.params.values().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(p.trainable as u8);
            let shape = p.value.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&p.value.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |message: &str| Error::Checkpoint {
            path: origin.to_path_buf(),
            message: message.to_string(),
        };
        let mut r = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if r.len() < n {
                return Err(fail("truncated archive"));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(fail("bad magic; not a parameter archive"));
        }
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let count = u64_at(take(8)?);
        let mut params = BTreeMap::new();
        for _ in 0..count {
            let len = u32_at(take(4)?) as usize;
            let name = std::str::from_utf8(take(len)?)
                .map_err(|_| fail("parameter name is not UTF-8"))?
                .to_string();
            let trainable = match take(1)?[0] {
                0 => false,
                1 => true,
                _ => return Err(fail("bad trainable flag")),
            };
            let ndim = u32_at(take(4)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64_at(take(8)?) as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = take(numel.checked_mul(8).ok_or_else(|| fail("tensor too large"))?)?;
            let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Tensor::new(shape, data).map_err(|e| fail(&e.to_string()))?;
            if params.insert(name.clone(), Param { value, trainable }).is_some() {
                return Err(fail(&format!("duplicate entry `{name}`")));
            }
        }
        if !r.is_empty() {
            return Err(fail("trailing bytes after last entry"));
        }
        Ok(ParamStore { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Maps store entries onto graph leaves, each name at most once per graph.
///
/// Names under a frozen prefix become frozen leaves whatever their stored
/// flag, which is how encoders are held fixed during early fusion.
#[derive(Debug)]
pub struct Binder<'s> {
    store: &'s ParamStore,
    frozen_prefixes: Vec<String>,
    bound: BTreeMap<String, NodeId>,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Binder {
            store,
            frozen_prefixes: Vec::new(),
            bound: BTreeMap::new(),
        }
    }

    pub fn freeze_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.frozen_prefixes.push(prefix.into());
        self
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        let frozen = self.frozen_prefixes.iter().any(|f| name.starts_with(f.as_str()));
        let id = g.param(name, p.value.clone(), p.trainable && !frozen);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn bound(&self) -> &BTreeMap<String, NodeId> {
        &self.bound
    }
}

/// Gaussian matrix with standard deviation `std`.
pub fn gaussian_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn archive_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.insert("enc.ct.bias", gaussian_tensor(&mut rng, &[3, 4], 1.0), true);
        s.insert("enc.ct.num.v_missing", Tensor::zeros([3, 4]), false);
        s.insert("head.fc.b", Tensor::scalar(-0.25), true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        s.save(&path).unwrap();
        assert_eq!(ParamStore::load(&path).unwrap(), s);
        assert_eq!(&std::fs::read(&path).unwrap()[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0), true);
        let bytes = s.to_bytes();
        let p = Path::new("x");
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamStore::from_bytes(&bad, p).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(ParamStore::from_bytes(&long, p).is_err());
    }

    #[test]
    fn binder_reuses_leaves_and_freezes_prefixes() {
        let mut s = ParamStore::new();
        s.insert("enc.a", Tensor::scalar(1.0), true);
        s.insert("head.b", Tensor::scalar(2.0), true);
        let mut g = Graph::new();
        let mut b = Binder::new(&s).freeze_prefix("enc.");
        let a1 = b.get(&mut g, "enc.a").unwrap();
        let a2 = b.get(&mut g, "enc.a").unwrap();
        let h = b.get(&mut g, "head.b").unwrap();
        assert_eq!(a1, a2);
        let prod = g.mul(a1, h).unwrap();
        let grads = g.backward(prod).unwrap();
        assert!(grads.named().get("enc.a").is_none());
        assert_eq!(grads.named()["head.b"].item().unwrap(), 1.0);
        assert!(b.get(&mut g, "nope").is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in prop::collection::vec(-1e300f64..1e300, 1..40), flag in any::<bool>()) {
            let mut s = ParamStore::new();
            s.insert("p", Tensor::new([values.len()], values.clone()).unwrap(), flag);
            prop_assert_eq!(ParamStore::from_bytes(&s.to_bytes(), Path::new("t")).unwrap(), s);
        }
    }
}
