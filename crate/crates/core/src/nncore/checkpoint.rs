//! Binary parameter dump.
//!
//! Layout (little endian): magic `CIRSPRM\0`, `u32` version, `u32` count,
//! then per tensor: `u32` name length, UTF-8 name, `u32` rank, `u64` dims,
//! raw `f64` bits. Values are stored as their bit patterns, so a round trip
//! is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"CIRSPRM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, store: &ParamStore) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 2 {
            return Err(NnError::Checkpoint(format!("`{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        store.add(name, Tensor::new(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Checkpoint(
            "trailing bytes after last tensor".into(),
        ));
    }
    Ok(store)
}

pub fn save_params(path: impl AsRef<Path>, store: &ParamStore) -> Result<(), NnError> {
    write_params(BufWriter::new(File::create(path)?), store)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore, NnError> {
    read_params(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            tensors in proptest::collection::vec(
                (1usize..4, 1usize..5, proptest::num::f64::ANY), 1..6),
        ) {
            let mut store = ParamStore::new();
            for (k, (r, c, v)) in tensors.iter().enumerate() {
                let data = (0..r * c).map(|j| if j == 0 { *v } else { *v * j as f64 - 0.1 }).collect();
                store.add(format!("t{k}.w"), Tensor::matrix(*r, *c, data).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_params(&mut buf, &store).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), store.len());
            for ((_, n1, t1), (_, n2, t2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            read_params(&b"NOTACKPT...."[..]),
            Err(NnError::Checkpoint(_))
        ));
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(1.0)).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &store).unwrap();
        buf.push(0);
        assert!(read_params(buf.as_slice()).is_err());
        buf.truncate(buf.len() - 3);
        assert!(read_params(buf.as_slice()).is_err());
    }
}
