//! Little-endian helpers shared by the binary checkpoint formats.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::{Error, Result, Scalar};

pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    pub fn magic(&mut self, magic: &[u8]) -> Result<()> {
        self.put(magic)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn floats<'a, T: Scalar>(&mut self, values: impl IntoIterator<Item = &'a T>) -> Result<()> {
        for v in values {
            self.put(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner
            .flush()
            .map_err(|e| Error::Checkpoint(format!("flush failed: {e}")))?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
            _ => Error::Checkpoint(format!("read failed ({what}): {e}")),
        })
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let mut buf = vec![0u8; magic.len()];
        self.take(&mut buf, "magic")?;
        if buf != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.take(&mut buf, what)?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} = {v} does not fit in memory")))
    }

    fn float<T: Scalar>(&mut self, what: &str) -> Result<T> {
        let mut buf = [0u8; 8];
        self.take(&mut buf, what)?;
        Ok(T::of(f64::from_le_bytes(buf)))
    }

    pub fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<T>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: shape overflow")))?;
        let data = (0..n).map(|_| self.float(what)).collect::<Result<Vec<T>>>()?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn vector<T: Scalar>(&mut self, len: usize, what: &str) -> Result<Array1<T>> {
        (0..len).map(|_| self.float(what)).collect::<Result<Vec<T>>>().map(Array1::from)
    }

    /// Fails unless the input is exhausted.
    pub fn expect_end(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Checkpoint("trailing bytes after tables (shape header mismatch)".into())),
            Err(e) => Err(Error::Checkpoint(e.to_string())),
        }
    }
}
