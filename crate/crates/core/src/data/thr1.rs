//! THR1 binary tensors: `"THR1"`, dtype code (0 = f32, 1 = f64), rank, six
//! zero bytes, `rank` little-endian u64 dims, then the row-major payload.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::DataError;
use crate::scalar::Scalar;

pub const THR1_MAGIC: &[u8; 4] = b"THR1";
pub const THR1_MAX_RANK: usize = 8;
const HEADER: usize = 12;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>, DataError> {
    if t.rank() > THR1_MAX_RANK {
        return Err(DataError::Format(format!("rank {} exceeds {THR1_MAX_RANK}", t.rank())));
    }
    let mut out = Vec::with_capacity(HEADER + 8 * t.rank() + T::BYTES * t.numel());
    out.extend_from_slice(THR1_MAGIC);
    out.push(T::DTYPE_CODE);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0; 6]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, DataError> {
    let err = |m: String| Err(DataError::Format(m));
    if bytes.len() < HEADER {
        return err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != THR1_MAGIC {
        return err(format!("bad magic {:?}", &bytes[..4]));
    }
    let (dtype, rank) = (bytes[4], bytes[5] as usize);
    if dtype != T::DTYPE_CODE {
        return err(format!("dtype code {dtype}, expected {}", T::DTYPE_CODE));
    }
    if rank > THR1_MAX_RANK {
        return err(format!("rank {rank} exceeds {THR1_MAX_RANK}"));
    }
    if bytes[6..HEADER].iter().any(|&b| b != 0) {
        return err("reserved header bytes are not zero".into());
    }
    let dims_end = HEADER + 8 * rank;
    if bytes.len() < dims_end {
        return err("truncated dimensions".into());
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for c in bytes[HEADER..dims_end].chunks_exact(8) {
        let d = usize::try_from(u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .map_err(|_| DataError::Format("dimension overflows usize".into()))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| DataError::Format("element count overflows".into()))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    if Some(payload.len()) != numel.checked_mul(T::BYTES) {
        return err(format!(
            "payload of {} bytes, expected {numel} elements of {} bytes",
            payload.len(),
            T::BYTES
        ));
    }
    let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok(Tensor::new(&shape, data)?)
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<(), DataError> {
    fs::write(path, encode_tensor(t)?).map_err(|e| DataError::io(path, e))
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_tensor(&bytes)
}
