//! Parameter blob format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPFG"
//! 4       4     format version, u32 LE (currently 1)
//! 8       8     NetworkSpec fingerprint, u64 LE
//! 16      8·N   parameters as f64 LE, in ParamSet insertion order
//! ```
//!
//! Policy order: for each observation part `i`, `enc{i}.0.weight`,
//! `enc{i}.0.bias`, `enc{i}.0.norm.gain`, `enc{i}.0.norm.bias`, then the same
//! four for `enc{i}.1`; `lstm.w_ih`, `lstm.w_hh`, `lstm.bias`;
//! `player_id.table`; `head.weight`, `head.bias`. Value order: the global
//! encoder `enc.*`, `lstm.*`, `head.*`. Matrices are row-major, weights are
//! `outputs × inputs`.

use alloc::format;
use alloc::vec::Vec;

use super::policy::{NetworkSpec, PolicyNet, ValueNet};
use super::tensor::ParamSet;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPFG";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(spec: &NetworkSpec, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.fingerprint().to_le_bytes());
    for t in params.tensors() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_into(bytes: &[u8], spec: &NetworkSpec, params: &mut ParamSet) -> Result<()> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Blob(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Blob("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Blob(format!("unsupported format version {version}")));
    }
    let found = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = spec.fingerprint();
    if found != expected {
        return Err(Error::SpecMismatch { expected, found });
    }
    let body = &bytes[HEADER_LEN..];
    let n = params.num_scalars();
    if body.len() != 8 * n {
        return Err(Error::Blob(format!(
            "expected {} parameter bytes, found {}",
            8 * n,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.load_flat(&values)
}

impl PolicyNet {
    pub fn to_blob(&self) -> Vec<u8> {
        encode(self.spec(), self.params())
    }

    pub fn from_blob(bytes: &[u8], spec: &NetworkSpec) -> Result<Self> {
        let mut net = PolicyNet::zeroed(spec)?;
        decode_into(bytes, spec, net.params_mut())?;
        Ok(net)
    }
}

impl ValueNet {
    pub fn to_blob(&self) -> Vec<u8> {
        encode(self.spec(), self.params())
    }

    pub fn from_blob(bytes: &[u8], spec: &NetworkSpec) -> Result<Self> {
        let mut net = ValueNet::zeroed(spec)?;
        decode_into(bytes, spec, net.params_mut())?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            obs_parts: vec![3, 2],
            encoder_width: 4,
            hidden_width: 5,
            num_actions: 3,
            num_agents: 2,
            id_embed_width: 2,
            global_state_width: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for seed in 0..5 {
            let mut rng = crate::rng_from_seed(seed);
            let net = PolicyNet::new(&spec(), &mut rng).unwrap();
            let bytes = net.to_blob();
            let back = PolicyNet::from_blob(&bytes, &spec()).unwrap();
            let a: Vec<u64> = net.params().flatten().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = back.params().flatten().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.to_blob(), bytes);
            let v = ValueNet::new(&spec(), &mut rng).unwrap();
            assert_eq!(ValueNet::from_blob(&v.to_blob(), &spec()).unwrap().to_blob(), v.to_blob());
        }
    }

    #[test]
    fn corrupted_fingerprint_errors() {
        let net = PolicyNet::new(&spec(), &mut crate::rng_from_seed(1)).unwrap();
        let mut bytes = net.to_blob();
        bytes[9] ^= 0xff;
        assert!(matches!(PolicyNet::from_blob(&bytes, &spec()), Err(Error::SpecMismatch { .. })));
        let mut other = spec();
        other.hidden_width = 6;
        assert!(matches!(PolicyNet::from_blob(&net.to_blob(), &other), Err(Error::SpecMismatch { .. })));
        let mut bad = net.to_blob();
        bad[0] = b'X';
        assert!(matches!(PolicyNet::from_blob(&bad, &spec()), Err(Error::Blob(_))));
        assert!(PolicyNet::from_blob(&net.to_blob()[..20], &spec()).is_err());
    }

    #[test]
    fn size_depends_only_on_spec() {
        let a = PolicyNet::new(&spec(), &mut crate::rng_from_seed(1)).unwrap();
        let b = PolicyNet::new(&spec(), &mut crate::rng_from_seed(2)).unwrap();
        assert_eq!(a.to_blob().len(), b.to_blob().len());
        assert_eq!(a.to_blob().len(), HEADER_LEN + 8 * a.params().num_scalars());
    }
}
