//! ENSW parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  "ENSW"
//! u16    format version
//! repeated until end of file:
//!   u16  name length, then the UTF-8 name bytes
//!   u8   rank, then one u32 per extent
//!   f32  values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"ENSW";
pub const VERSION: u16 = 1;

pub fn write<W: Write>(mut w: W, records: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in records {
        let len = u16::try_from(name.len()).map_err(|_| NnError::Checkpoint(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| NnError::Checkpoint(format!("extent {e} too large")))?;
            w.write_all(&e.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic, expected ENSW".into()));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        let len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

pub fn save(path: &Path, records: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut bytes = Vec::new();
    write(&mut bytes, records)?;
    std::fs::write(path, bytes).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let f = std::fs::File::open(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    read(std::io::BufReader::new(f))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Checkpoint(format!("truncated record at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
