//! `.bdp` policy files.
//!
//! ```text
//! magic "BDPL" | version u16 | obs_dim u32 | width u32 | activation u8
//! head u8 (0 discrete, 1 continuous) | out u32 | n_params u32
//! params f32 * n_params | crc32 u32 of everything before it
//! ```

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};

use crate::error::{Error, Result};
use crate::nn::{Activation, Arch, Head, PolicyParams};

pub const POLICY_MAGIC: &[u8; 4] = b"BDPL";
pub const POLICY_VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 4 + 4 + 1 + 1 + 4 + 4;

pub fn policy_to_bytes(p: &PolicyParams) -> Vec<u8> {
    let a = p.arch();
    let mut w = vec![0u8; HEADER + 4 * p.len()];
    w[..4].copy_from_slice(POLICY_MAGIC);
    LE::write_u16(&mut w[4..6], POLICY_VERSION);
    LE::write_u32(&mut w[6..10], a.obs_dim as u32);
    LE::write_u32(&mut w[10..14], a.width as u32);
    w[14] = match a.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    };
    let (kind, out) = match a.head {
        Head::Discrete { n_actions } => (0, n_actions),
        Head::Continuous { action_dim } => (1, action_dim),
    };
    w[15] = kind;
    LE::write_u32(&mut w[16..20], out as u32);
    LE::write_u32(&mut w[20..24], p.len() as u32);
    LE::write_f32_into(p.as_slice(), &mut w[HEADER..]);
    let crc = crc32fast::hash(&w);
    w.extend_from_slice(&crc.to_le_bytes());
    w
}

pub fn policy_from_bytes(bytes: &[u8]) -> Result<PolicyParams> {
    let corrupt = |m: &str| Error::Corrupt(format!("policy file: {m}"));
    if bytes.len() < HEADER + 4 || &bytes[..4] != POLICY_MAGIC {
        return Err(corrupt("missing BDPL header"));
    }
    let version = LE::read_u16(&bytes[4..6]);
    if version != POLICY_VERSION {
        return Err(Error::Version {
            found: version,
            expected: POLICY_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != LE::read_u32(tail) {
        return Err(corrupt("checksum mismatch"));
    }
    let activation = match body[14] {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        k => return Err(corrupt(&format!("unknown activation {k}"))),
    };
    let out = LE::read_u32(&body[16..20]) as usize;
    let head = match body[15] {
        0 => Head::Discrete { n_actions: out },
        1 => Head::Continuous { action_dim: out },
        k => return Err(corrupt(&format!("unknown head {k}"))),
    };
    let arch = Arch::new(
        LE::read_u32(&body[6..10]) as usize,
        LE::read_u32(&body[10..14]) as usize,
        activation,
        head,
    );
    let n = LE::read_u32(&body[20..24]) as usize;
    if body.len() != HEADER + 4 * n || n != arch.n_params() {
        return Err(corrupt("parameter count does not match the architecture"));
    }
    let mut params = vec![0.0f32; n];
    LE::read_f32_into(&body[HEADER..], &mut params);
    PolicyParams::from_flat(arch, params)
}

pub fn save_policy(p: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, policy_to_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    policy_from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::init_policy;

    #[test]
    fn round_trip_and_corruption() {
        for head in [Head::Discrete { n_actions: 3 }, Head::Continuous { action_dim: 2 }] {
            let p = init_policy(Arch::new(5, 7, Activation::Relu, head), 4);
            let bytes = policy_to_bytes(&p);
            assert_eq!(policy_from_bytes(&bytes).unwrap(), p);
            let mut bad = bytes.clone();
            bad[30] ^= 1;
            assert!(matches!(policy_from_bytes(&bad), Err(Error::Corrupt(_))));
            assert!(policy_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
