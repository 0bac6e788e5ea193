//! `CPLX1` checkpoint: magic, `u64` LE `(n_entities, n_relations, d)`, then
//! entity_re, entity_im, relation_re, relation_im as row-major LE `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ComplExModel;
use crate::binio::{Reader, Writer};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 5] = b"CPLX1";

impl<T: Scalar> ComplExModel<T> {
    pub fn write_to<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.magic(MAGIC)?;
        w.u64(self.n_entities() as u64)?;
        w.u64(self.n_relations() as u64)?;
        w.u64(self.dim() as u64)?;
        for table in [&self.entity_re, &self.entity_im, &self.relation_re, &self.relation_im] {
            w.floats(table.iter())?;
        }
        w.finish()
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(MAGIC)?;
        let n_e = r.usize("n_entities")?;
        let n_r = r.usize("n_relations")?;
        let d = r.usize("dim")?;
        if n_e == 0 || n_r == 0 || d == 0 {
            return Err(Error::Checkpoint(format!("degenerate shape ({n_e}, {n_r}, {d})")));
        }
        let model = Self {
            entity_re: r.matrix(n_e, d, "entity_re")?,
            entity_im: r.matrix(n_e, d, "entity_im")?,
            relation_re: r.matrix(n_r, d, "relation_re")?,
            relation_im: r.matrix(n_r, d, "relation_im")?,
        };
        r.expect_end()?;
        Ok(model)
    }

    pub fn save_embeddings(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
