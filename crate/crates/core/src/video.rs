//! EVT1 video tensor files.
//!
//! Layout: `EVT1`, u16 version, u32 T, C, H, W, then T*C*H*W little-endian
//! f32 values in (t, c, h, w) row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use echosyn_nn::Tensor;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"EVT1";
pub const VERSION: u16 = 1;

pub fn write_video<W: Write>(mut w: W, video: &Tensor<f32>) -> std::io::Result<()> {
    assert_eq!(video.rank(), 4, "EVT1 stores rank-4 tensors");
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for &e in video.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(video.numel() * 4);
    for v in video.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_video<R: Read>(mut r: R) -> std::result::Result<Tensor<f32>, String> {
    let mut head = [0u8; 22];
    r.read_exact(&mut head).map_err(|_| "truncated header".to_string())?;
    if &head[..4] != MAGIC {
        return Err("bad magic (expected EVT1)".into());
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut shape = [0usize; 4];
    for (i, e) in shape.iter_mut().enumerate() {
        let o = 6 + 4 * i;
        *e = u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
    }
    let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or("extent overflow")?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| e.to_string())?;
    if body.len() != n * 4 {
        return Err(format!("payload has {} bytes, header implies {}", body.len(), n * 4));
    }
    let data: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value in payload".into());
    }
    Tensor::from_vec(&shape, data).map_err(|e| e.to_string())
}

pub fn save(path: &Path, video: &Tensor<f32>) -> Result<()> {
    if video.rank() != 4 {
        return Err(CoreError::Shape(format!("EVT1 stores (T, C, H, W), got {:?}", video.shape())));
    }
    let f = File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_video(BufWriter::new(f), video).map_err(|e| CoreError::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor<f32>> {
    let f = File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_video(BufReader::new(f)).map_err(|d| CoreError::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let v = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_video(&mut buf, &v).unwrap();
        assert_eq!(&buf[..4], b"EVT1");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[18..22], &[2, 0, 0, 0]);
        assert_eq!(buf.len(), 22 + 8);
        assert_eq!(read_video(&buf[..]).unwrap(), v);
    }

    #[test]
    fn rejects_corruption() {
        let v = Tensor::zeros(&[2, 1, 2, 2]);
        let mut buf = Vec::new();
        write_video(&mut buf, &v).unwrap();
        assert!(read_video(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_video(&bad[..]).is_err());
        assert!(read_video(&buf[..10]).is_err());
    }
}
