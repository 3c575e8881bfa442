use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, Graph, Var};
use crate::nn::tensor::Tensor;

pub const FORMAT_VERSION: u8 = 1;

/// Storage precision of serialized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Ordered, uniquely named collection of tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Same names, order and shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            let name = self
                .names()
                .zip(other.names())
                .find(|(a, b)| a != b)
                .map(|(a, _)| a)
                .or_else(|| self.names().nth(other.len()))
                .or_else(|| other.names().nth(self.len()))
                .unwrap_or("<entry count>");
            return Err(Error::Misaligned(name.to_string()));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::Misaligned(na.to_string()));
            }
        }
        Ok(())
    }

    pub fn is_aligned(&self, other: &ParamSet) -> bool {
        self.check_aligned(other).is_ok()
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
        }
    }

    /// All values, concatenated in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// L2 norm of `self - other` over all entries.
    pub fn distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_aligned(other)?;
        let sq: f64 = self
            .entries
            .values()
            .zip(other.entries.values())
            .flat_map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
            })
            .sum();
        Ok(sq.sqrt())
    }

    /// Register every entry as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), graph.param(t.clone())))
                .collect(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W, precision: Precision) -> Result<()> {
        w.write_all(&[FORMAT_VERSION, precision.tag()])?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match precision {
                Precision::F64 => {
                    for &v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Precision::F32 => {
                    for &v in t.data() {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, precision: Precision) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, precision)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ParamSet> {
        let mut head = [0u8; 2];
        r.read_exact(&mut head)?;
        if head[0] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", head[0])));
        }
        let precision = match head[1] {
            4 => Precision::F32,
            8 => Precision::F64,
            other => return Err(Error::Format(format!("unknown value width {other}"))),
        };
        let count = read_u32(r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 1 << 16 {
                return Err(Error::Format("name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::Format("name is not utf-8".into()))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if n > 1 << 30 {
                return Err(Error::Format("tensor too large".into()));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(match precision {
                    Precision::F64 => {
                        let mut b = [0u8; 8];
                        r.read_exact(&mut b)?;
                        f64::from_le_bytes(b)
                    }
                    Precision::F32 => {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        f32::from_le_bytes(b) as f64
                    }
                });
            }
            set.insert(name, Tensor::new(&shape, data)?)?;
        }
        Ok(set)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<ParamSet> {
        let set = Self::read_from(&mut bytes)?;
        if !bytes.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len())));
        }
        Ok(set)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl FromIterator<(String, Tensor)> for ParamSet {
    /// Later duplicates replace earlier ones.
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Graph variables for each entry of a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Panics on unknown names; model code only asks for names it created.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn try_var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Misaligned(name.to_string()))
    }

    /// Collect the gradients of the bound entries as a named set.
    pub fn gradients(&self, grads: &mut Gradients) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let g = grads
                .take(v)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}

/// One gradient step `w <- w - lr * (grad + reg * w)`.
///
/// `reg` weights the `0.5 * ||w||^2` penalty, whose gradient is `w` itself.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64, reg: f64) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for (name, w) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        if g.shape() != w.shape() {
            return Err(Error::Misaligned(name.to_string()));
        }
        let updated = w.zip_map(g, |wv, gv| wv - lr * (gv + reg * wv))?;
        out.insert(name, updated)?;
    }
    Ok(out)
}

/// Rescale gradients so that their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &ParamSet, max_norm: f64) -> ParamSet {
    let norm = grads.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= max_norm || norm == 0.0 {
        grads.clone()
    } else {
        let s = max_norm / norm;
        grads.map(|t| t.map(|v| v * s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn sgd_examples() {
        let w = one("w", 1.0);
        let g = one("w", 2.0);
        let out = sgd_step(&w, &g, 0.1, 0.0).unwrap();
        assert!((out.get("w").unwrap().item() - 0.8).abs() < 1e-15);
        assert_eq!(sgd_step(&w, &g, 0.0, 0.0).unwrap(), w);
        // reg 0.5: 1 - 0.1 * (2 + 0.5)
        let out = sgd_step(&w, &g, 0.1, 0.5).unwrap();
        assert!((out.get("w").unwrap().item() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sgd_missing_grad() {
        let w = one("w", 1.0);
        let g = one("v", 2.0);
        assert!(matches!(
            sgd_step(&w, &g, 0.1, 0.0),
            Err(Error::MissingGradient(n)) if n == "w"
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = one("a", 1.0);
        assert!(p.insert("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn alignment() {
        let mut a = one("a", 1.0);
        a.insert("b", Tensor::zeros(&[2, 2])).unwrap();
        let mut b = one("a", 5.0);
        b.insert("b", Tensor::zeros(&[2, 2])).unwrap();
        assert!(a.is_aligned(&b));
        let mut c = one("a", 5.0);
        c.insert("b", Tensor::zeros(&[4])).unwrap();
        assert!(matches!(a.check_aligned(&c), Err(Error::Misaligned(n)) if n == "b"));
    }

    #[test]
    fn version_byte_first_and_checked() {
        let p = one("w", 1.5);
        let mut bytes = p.to_bytes(Precision::F64);
        assert_eq!(bytes[0], FORMAT_VERSION);
        assert_eq!(bytes[1], 8);
        assert_eq!(ParamSet::from_bytes(&bytes).unwrap(), p);
        bytes[0] = 99;
        assert!(matches!(
            ParamSet::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn f32_storage_rounds_values() {
        let p = one("w", 0.1);
        let back = ParamSet::from_bytes(&p.to_bytes(Precision::F32)).unwrap();
        assert_eq!(back.get("w").unwrap().item(), 0.1f32 as f64);
    }

    #[test]
    fn truncated_input_errors() {
        let p = one("w", 1.5);
        let bytes = p.to_bytes(Precision::F64);
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
