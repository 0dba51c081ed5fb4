//! Versioned weights container: a JSON header (format version, architecture
//! fingerprint, temperature, softplus beta, encoding layout note) followed by
//! named little-endian float64 arrays.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuralError, ParameterStore, Tensor};

const MAGIC: &[u8; 4] = b"GWNN";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format_version: u32,
    /// Fingerprint over parameter names and shapes; load refuses a mismatch.
    pub architecture_hash: u64,
    pub temperature: f64,
    pub softplus_beta: f64,
    /// Human-readable description of the instance encoding layout.
    pub encoding_layout: String,
}

/// Order-sensitive FNV-1a over names and shapes.
pub fn architecture_hash(store: &ParameterStore) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    for (name, t) in store.iter() {
        mix(name.as_bytes());
        for &d in &t.shape {
            mix(&(d as u64).to_le_bytes());
        }
    }
    h
}

pub fn save_weights(
    path: &Path,
    store: &ParameterStore,
    temperature: f64,
    softplus_beta: f64,
    encoding_layout: &str,
) -> Result<(), NeuralError> {
    let header = WeightsHeader {
        format_version: WEIGHTS_FORMAT_VERSION,
        architecture_hash: architecture_hash(store),
        temperature,
        softplus_beta,
        encoding_layout: encoding_layout.to_string(),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialises");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    f.write_all(&(store.names().len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        f.write_all(&(nb.len() as u32).to_le_bytes())?;
        f.write_all(nb)?;
        f.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Loads weights into a store built with the same architecture; the header's
/// hash must match the store layout.
pub fn load_weights(
    path: &Path,
    store: &mut ParameterStore,
) -> Result<WeightsHeader, NeuralError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Corrupt("bad magic".into()));
    }
    let header_len = read_u32(&mut f)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: WeightsHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| NeuralError::Corrupt(format!("header: {e}")))?;
    if header.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(NeuralError::Corrupt(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.architecture_hash != architecture_hash(store) {
        return Err(NeuralError::Corrupt("architecture hash mismatch".into()));
    }
    let n = read_u32(&mut f)? as usize;
    for _ in 0..n {
        let name_len = read_u32(&mut f)? as usize;
        let mut nb = vec![0u8; name_len];
        f.read_exact(&mut nb)?;
        let name = String::from_utf8(nb).map_err(|_| NeuralError::Corrupt("name".into()))?;
        let ndim = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut f)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = vec![0.0; count];
        for v in data.iter_mut() {
            let mut b = [0u8; 8];
            f.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let target = store.get_mut(&name);
        if target.shape != shape {
            return Err(NeuralError::Corrupt(format!("shape mismatch for `{name}`")));
        }
        *target = Tensor::from_vec(&shape, data);
    }
    Ok(header)
}

/// One-line description of the encoding, stored into every weights file.
pub const ENCODING_LAYOUT: &str = "streams: flow(q/100), pressure(p/50-1), \
state[pressures p/50-1, pipe end flows q/100, arc flows q/100, inflows q/100, \
one-hot initial mode, constants/(300,1,20,200,50)] broadcast over time";
