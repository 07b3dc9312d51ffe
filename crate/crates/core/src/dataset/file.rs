//! `.bdd` container: little-endian, length-prefixed, CRC32-terminated.
//!
//! ```text
//! magic "BDDS" | version u16 | task str
//! n_rows u32 | obs_dim u32 | kind u8
//!   discrete:   n_classes u32
//!   continuous: act_dim u32 | low f32*act_dim | high f32*act_dim
//! n_blocks u16 | per block: task str, row_offset, rows, obs_offset,
//!                obs_dim, act_offset, act_dim (u32 each)
//! states f32 * n_rows*obs_dim
//! labels u32 * n_rows  |  actions f32 * n_rows*act_dim
//! normalizer kind u8 (0 identity, 1 affine) [mean f32*obs_dim, std f32*obs_dim]
//! generation u64 | fitness f64 | seed u64 | width u32 | activation u8
//! lr f64 | epochs u32 | variant str
//! crc32 u32 of everything before it
//! ```
//! Strings are a u16 byte length followed by UTF-8.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Actions, Block, Provenance, SyntheticDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Activation;
use crate::normalizer::ObservationNormalizer;

pub const MAGIC: &[u8; 4] = b"BDDS";
pub const FORMAT_VERSION: u16 = 1;

impl SyntheticDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u16(&mut w, usize::from(FORMAT_VERSION));
        put_str(&mut w, &self.task);
        put_u32(&mut w, self.n_rows());
        put_u32(&mut w, self.obs_dim());
        match &self.actions {
            Actions::Discrete { n_classes, .. } => {
                w.push(0);
                put_u32(&mut w, *n_classes);
            }
            Actions::Continuous { low, high, .. } => {
                w.push(1);
                put_u32(&mut w, low.len());
                put_f32s(&mut w, low);
                put_f32s(&mut w, high);
            }
        }
        put_u16(&mut w, self.blocks.len());
        for b in &self.blocks {
            put_str(&mut w, &b.task);
            for v in [b.row_offset, b.rows, b.obs_offset, b.obs_dim, b.act_offset, b.act_dim] {
                put_u32(&mut w, v);
            }
        }
        put_f32s(&mut w, self.states.as_slice());
        match &self.actions {
            Actions::Discrete { labels, .. } => labels.iter().for_each(|&l| put_u32(&mut w, l)),
            Actions::Continuous { values, .. } => put_f32s(&mut w, values.as_slice()),
        }
        match &self.normalizer {
            ObservationNormalizer::Identity { .. } => w.push(0),
            ObservationNormalizer::Affine { mean, std } => {
                w.push(1);
                put_f32s(&mut w, mean);
                put_f32s(&mut w, std);
            }
        }
        let m = &self.meta;
        w.write_u64::<LE>(m.generation).expect("vec write");
        w.write_f64::<LE>(m.fitness).expect("vec write");
        w.write_u64::<LE>(m.seed).expect("vec write");
        w.write_u32::<LE>(m.width).expect("vec write");
        w.push(match m.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        w.write_f64::<LE>(m.lr).expect("vec write");
        w.write_u32::<LE>(m.epochs).expect("vec write");
        put_str(&mut w, &m.variant);
        let crc = crc32fast::hash(&w);
        w.write_u32::<LE>(crc).expect("vec write");
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("missing BDDS magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 10 {
            return Err(Error::Corrupt("truncated file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Cursor::new(&body[6..]);
        let ds = read_body(&mut r).map_err(|e| match e {
            Error::Io { .. } => Error::Corrupt("truncated file".into()),
            other => other,
        })?;
        if (r.position() as usize) != body.len() - 6 {
            return Err(Error::Corrupt("trailing bytes after dataset".into()));
        }
        ds.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(ds)
    }
}

fn read_body(r: &mut Cursor<&[u8]>) -> Result<SyntheticDataset> {
    let task = get_str(r)?;
    let n = get_u32(r)?;
    let obs_dim = get_u32(r)?;
    let kind = get_u8(r)?;
    let action_header = match kind {
        0 => (get_u32(r)?, None),
        1 => {
            let a = get_u32(r)?;
            let low = get_f32s(r, a)?;
            let high = get_f32s(r, a)?;
            (a, Some((low, high)))
        }
        k => return Err(Error::Corrupt(format!("unknown action kind {k}"))),
    };
    let n_blocks = get_u16(r)?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let task = get_str(r)?;
        let mut v = [0usize; 6];
        for x in &mut v {
            *x = get_u32(r)?;
        }
        blocks.push(Block {
            task,
            row_offset: v[0],
            rows: v[1],
            obs_offset: v[2],
            obs_dim: v[3],
            act_offset: v[4],
            act_dim: v[5],
        });
    }
    let cells = n
        .checked_mul(obs_dim)
        .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
    let states = Matrix::from_vec(n, obs_dim, get_f32s(r, cells)?)?;
    let actions = match action_header {
        (n_classes, None) => {
            let mut labels = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                labels.push(get_u32(r)?);
            }
            Actions::Discrete { n_classes, labels }
        }
        (a, Some((low, high))) => {
            let values = Matrix::from_vec(n, a, get_f32s(r, n * a)?)?;
            Actions::Continuous { low, high, values }
        }
    };
    let normalizer = match get_u8(r)? {
        0 => ObservationNormalizer::identity(obs_dim),
        1 => {
            let mean = get_f32s(r, obs_dim)?;
            let std = get_f32s(r, obs_dim)?;
            ObservationNormalizer::affine(mean, std).map_err(|e| Error::Corrupt(e.to_string()))?
        }
        k => return Err(Error::Corrupt(format!("unknown normalizer kind {k}"))),
    };
    let generation = r.read_u64::<LE>().map_err(eof)?;
    let fitness = r.read_f64::<LE>().map_err(eof)?;
    let seed = r.read_u64::<LE>().map_err(eof)?;
    let width = r.read_u32::<LE>().map_err(eof)?;
    let activation = match get_u8(r)? {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        k => return Err(Error::Corrupt(format!("unknown activation {k}"))),
    };
    let lr = r.read_f64::<LE>().map_err(eof)?;
    let epochs = r.read_u32::<LE>().map_err(eof)?;
    let variant = get_str(r)?;
    Ok(SyntheticDataset {
        task,
        states,
        actions,
        normalizer,
        blocks,
        meta: Provenance {
            generation,
            fitness,
            seed,
            width,
            activation,
            lr,
            epochs,
            variant,
        },
    })
}

fn eof(_: std::io::Error) -> Error {
    Error::Corrupt("truncated file".into())
}

fn put_u16(w: &mut Vec<u8>, v: usize) {
    w.write_u16::<LE>(u16::try_from(v).expect("value fits in u16"))
        .expect("vec write");
}

fn put_u32(w: &mut Vec<u8>, v: usize) {
    w.write_u32::<LE>(u32::try_from(v).expect("value fits in u32"))
        .expect("vec write");
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u16(w, s.len());
    w.extend_from_slice(s.as_bytes());
}

fn put_f32s(w: &mut Vec<u8>, xs: &[f32]) {
    w.reserve(4 * xs.len());
    for &x in xs {
        w.write_f32::<LE>(x).expect("vec write");
    }
}

fn get_u8(r: &mut Cursor<&[u8]>) -> Result<u8> {
    r.read_u8().map_err(eof)
}

fn get_u16(r: &mut Cursor<&[u8]>) -> Result<usize> {
    Ok(r.read_u16::<LE>().map_err(eof)? as usize)
}

fn get_u32(r: &mut Cursor<&[u8]>) -> Result<usize> {
    Ok(r.read_u32::<LE>().map_err(eof)? as usize)
}

fn get_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = get_u16(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(eof)?;
    String::from_utf8(buf).map_err(|_| Error::Corrupt("invalid UTF-8 string".into()))
}

fn get_f32s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f32>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.checked_mul(4).is_none_or(|b| b > remaining) {
        return Err(Error::Corrupt("truncated file".into()));
    }
    let mut out = vec![0.0; n];
    r.read_f32_into::<LE>(&mut out).map_err(eof)?;
    Ok(out)
}
