//! Model file format ("STPM"): header with network geometry, then each
//! named parameter tensor as (name, rank, shape, little-endian f32 payload).
//! Round-trips are bitwise exact.

use super::network::{NetConfig, NetworkParams, OutputMode};
use super::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"STPM";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("not a model file (bad magic)")]
    Magic,
    #[error("unsupported model format version {0}")]
    Version(u16),
    #[error("model file truncated")]
    Truncated,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("model schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelIoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelIoError::Truncated
        } else {
            ModelIoError::Io(e)
        }
    })
}

fn read_u8(r: &mut impl Read) -> Result<u8, ModelIoError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16, ModelIoError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelIoError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_model(params: &NetworkParams<f32>, w: &mut impl Write) -> Result<(), ModelIoError> {
    let m = &params.meta;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[m.dim as u8])?;
    for v in [m.side, m.in_channels, m.hidden, m.kernel, m.layers] {
        w.write_all(&(v as u16).to_le_bytes())?;
    }
    w.write_all(&[match m.output_mode {
        OutputMode::FullFrame => 0u8,
        OutputMode::ProbOnly => 1u8,
    }])?;
    let tensors = params.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.shape().len() as u8])?;
        for &s in t.shape() {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<NetworkParams<f32>, ModelIoError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(ModelIoError::Magic);
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(ModelIoError::Version(version));
    }
    let dim = read_u8(r)? as usize;
    let side = read_u16(r)? as usize;
    let in_channels = read_u16(r)? as usize;
    let hidden = read_u16(r)? as usize;
    let kernel = read_u16(r)? as usize;
    let layers = read_u16(r)? as usize;
    let output_mode = match read_u8(r)? {
        0 => OutputMode::FullFrame,
        1 => OutputMode::ProbOnly,
        x => return Err(ModelIoError::Corrupt(format!("unknown output mode {x}"))),
    };
    if dim != 2 && dim != 3 {
        return Err(ModelIoError::Corrupt(format!("dimensionality {dim}")));
    }
    let meta = NetConfig { side, dim, in_channels, hidden, kernel, layers, output_mode };
    let mut params = NetworkParams::<f32>::init(meta, crate::util::RngSeed(0))
        .map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    let count = read_u32(r)? as usize;
    let expected = params.named_tensors().len();
    if count != expected {
        return Err(ModelIoError::Schema(format!("{count} parameters in file, network needs {expected}")));
    }
    let mut filled = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = read_u16(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| ModelIoError::Corrupt("parameter name is not UTF-8".into()))?;
        let rank = read_u8(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        read_exact(r, &mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
        let mut found = false;
        for (n, t) in params.named_tensors_mut() {
            if n == name {
                if t.shape() != tensor.shape() {
                    return Err(ModelIoError::Schema(format!(
                        "parameter {name}: file shape {:?}, network shape {:?}",
                        tensor.shape(),
                        t.shape()
                    )));
                }
                *t = tensor.clone();
                found = true;
                break;
            }
        }
        if !found {
            return Err(ModelIoError::Schema(format!("unexpected parameter {name}")));
        }
        if !filled.insert(name.clone()) {
            return Err(ModelIoError::Corrupt(format!("duplicate parameter {name}")));
        }
    }
    Ok(params)
}

pub fn save_model(params: &NetworkParams<f32>, path: &Path) -> Result<(), ModelIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NetworkParams<f32>, ModelIoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_model(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::RngSeed;

    fn sample_params() -> NetworkParams<f32> {
        let meta = NetConfig {
            side: 6,
            dim: 2,
            in_channels: 3,
            hidden: 4,
            kernel: 3,
            layers: 2,
            output_mode: OutputMode::FullFrame,
        };
        NetworkParams::init(meta, RngSeed(42)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let params = sample_params();
        let mut bytes = Vec::new();
        write_model(&params, &mut bytes).unwrap();
        let back = read_model(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.meta, params.meta);
        for ((an, a), (bn, b)) in params.named_tensors().iter().zip(back.named_tensors().iter()) {
            assert_eq!(an, bn);
            assert_eq!(a.shape(), b.shape());
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "parameter {an} not bitwise identical");
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let params = sample_params();
        let mut bytes = Vec::new();
        write_model(&params, &mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_model(&mut bytes.as_slice()), Err(ModelIoError::Magic)));
    }

    #[test]
    fn truncation_is_detected() {
        let params = sample_params();
        let mut bytes = Vec::new();
        write_model(&params, &mut bytes).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let r = read_model(&mut &bytes[..cut]);
            assert!(
                matches!(r, Err(ModelIoError::Truncated)),
                "cut at {cut}: {r:?}"
            );
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let params = sample_params();
        let mut bytes = Vec::new();
        write_model(&params, &mut bytes).unwrap();
        bytes[4] = 0xFF;
        assert!(matches!(read_model(&mut bytes.as_slice()), Err(ModelIoError::Version(_))));
    }
}
