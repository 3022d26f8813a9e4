//! Little-endian named-tensor container.
//!
//! Layout: `b"ADNT"`, `u32` version, `u64` count, then per tensor a `u32`
//! name length, UTF-8 name, `u32` rank, `u64` dims and `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::TensorError;
use crate::tensor::{numel, Tensor};

const MAGIC: &[u8; 4] = b"ADNT";
const VERSION: u32 = 1;

pub fn write_tensors<'a, W: Write>(
    mut w: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), TensorError> {
    let entries: Vec<_> = entries.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Format("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(TensorError::Format(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut bytes = vec![0u8; numel(&shape) * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((name, Tensor::new(&shape, data)));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<(), TensorError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(f, entries.iter().map(|(n, t)| (n.as_str(), t)))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    read_tensors(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_bits() {
        let a = Tensor::new(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]);
        let b = Tensor::scalar(42.0);
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("enc.w", &a), ("step", &b)]).unwrap();
        let back = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "enc.w");
        assert_eq!(back[0].1.shape(), a.shape());
        for (x, y) in back[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back[1].1.item(), 42.0);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("x", &Tensor::ones(&[4]))]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensors(buf.as_slice()).is_err());
        assert!(read_tensors(&b"NOPE"[..]).is_err());
    }
}
