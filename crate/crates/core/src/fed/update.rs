//! Client-to-server wire format.
//!
//! `AQCU` magic, then `[id_len u32][id utf-8][H_k u64][round u32][loss f64]`
//! (little-endian) followed by the parameter binary format.

use std::io::Read;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Precision};

const MAGIC: &[u8; 4] = b"AQCU";

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub round: u32,
    pub sample_count: u64,
    /// Mean local training loss of the last local epoch.
    pub loss: f64,
    pub params: ParamSet,
}

impl ClientUpdate {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.client_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.client_id.as_bytes());
        out.extend_from_slice(&self.sample_count.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.loss.to_le_bytes());
        out.extend(self.params.to_bytes(Precision::F64));
        out
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a client update".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let len = u32::from_le_bytes(b4) as usize;
        if len > r.len() {
            return Err(Error::Format("client id overruns the buffer".into()));
        }
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let client_id =
            String::from_utf8(id).map_err(|_| Error::Format("client id is not utf-8".into()))?;
        r.read_exact(&mut b8)?;
        let sample_count = u64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let round = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let loss = f64::from_le_bytes(b8);
        let params = ParamSet::from_bytes(r)?;
        Ok(Self {
            client_id,
            round,
            sample_count,
            loss,
            params,
        })
    }
}

/// First raw buffer found verbatim inside `bytes`, if any.
pub fn find_embedded<'a>(bytes: &[u8], raw: impl IntoIterator<Item = &'a [u8]>) -> Option<usize> {
    raw.into_iter()
        .enumerate()
        .find(|(_, buf)| !buf.is_empty() && memchr::memmem::find(bytes, buf).is_some())
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn sample() -> ClientUpdate {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(&[1.0, -2.5])).unwrap();
        ClientUpdate {
            client_id: "uav-2".into(),
            round: 3,
            sample_count: 150,
            loss: 0.25,
            params: p,
        }
    }

    #[test]
    fn round_trip() {
        let u = sample();
        assert_eq!(ClientUpdate::decode(&u.encode()).unwrap(), u);
    }

    #[test]
    fn truncated_rejected() {
        let b = sample().encode();
        assert!(ClientUpdate::decode(&b[..b.len() - 1]).is_err());
        assert!(ClientUpdate::decode(b"XXXX").is_err());
    }

    #[test]
    fn embedded_detection() {
        let bytes = b"header-abcdef-trailer";
        assert_eq!(find_embedded(bytes, [&b"zzz"[..], &b"cde"[..]]), Some(1));
        assert_eq!(find_embedded(bytes, [&b"zzz"[..]]), None);
    }
}
