//! Named-tensor container file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"RCNT"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name utf-8, dtype u8 (1 = f64), ndim u32, dims u64 * ndim }
//! count x raw f64 data, in header order
//! ```

use std::io::{Read, Write};

use super::{NnError, Tensor};

pub const MAGIC: &[u8; 4] = b"RCNT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_tensors<W: Write>(mut out: W, tensors: &[(String, &Tensor)]) -> Result<(), NnError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[DTYPE_F64])?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for (_, tensor) in tensors {
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, NnError> {
    let mut buf = [0; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, NnError> {
    let mut buf = [0; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_tensors<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut magic = [0; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Container("not a tensor container (bad magic)".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(NnError::Container(format!("unsupported container version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Container("tensor name is not utf-8".into()))?;
        let mut dtype = [0; 1];
        input.read_exact(&mut dtype)?;
        if dtype[0] != DTYPE_F64 {
            return Err(NnError::Container(format!("tensor `{name}` has unknown dtype {}", dtype[0])));
        }
        let ndim = read_u32(&mut input)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        headers.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in headers {
        let n: usize = shape.iter().product();
        let mut raw = vec![0; n * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 0..5)) {
            let tensors: Vec<(String, Tensor)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let n: usize = s.iter().product();
                    let data = (0..n).map(|j| (i * 100 + j) as f64 * -0.37).collect();
                    (format!("layer{i}.w"), Tensor::new(s.clone(), data).unwrap())
                })
                .collect();
            let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &refs).unwrap();
            prop_assert_eq!(read_tensors(buf.as_slice()).unwrap(), tensors);
        }
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(matches!(read_tensors(&b"XXXX\x01\0\0\0\0\0\0\0"[..]), Err(NnError::Container(_))));
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("a".into(), &t)]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_tensors(buf.as_slice()), Err(NnError::Io(_))));
        let mut versioned = Vec::new();
        write_tensors(&mut versioned, &[]).unwrap();
        versioned[4] = 9;
        assert!(matches!(read_tensors(versioned.as_slice()), Err(NnError::Container(_))));
    }
}
