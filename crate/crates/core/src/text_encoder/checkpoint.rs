//! `BLSTM1` checkpoint: magic, `u64` LE `(vocab_size, embed_dim, hidden,
//! n_layers)`, the embedding table, then `W, U, b` for each layer's forward
//! and backward direction, all as row-major LE `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::lstm::{BiLstmParams, Bidirectional, LstmWeights, N_LAYERS};
use crate::binio::{Reader, Writer};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 6] = b"BLSTM1";

impl<T: Scalar> BiLstmParams<T> {
    pub fn write_to<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.magic(MAGIC)?;
        for v in [self.vocab_size(), self.embed_dim(), self.hidden(), N_LAYERS] {
            w.u64(v as u64)?;
        }
        w.floats(self.embedding.iter())?;
        for layer in &self.layers {
            for dir in [&layer.fwd, &layer.bwd] {
                w.floats(dir.w.iter())?;
                w.floats(dir.u.iter())?;
                w.floats(dir.b.iter())?;
            }
        }
        w.finish()
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.expect_magic(MAGIC)?;
        let vocab = r.usize("vocab_size")?;
        let embed = r.usize("embed_dim")?;
        let hidden = r.usize("hidden")?;
        let layers = r.usize("n_layers")?;
        if layers != N_LAYERS {
            return Err(Error::Checkpoint(format!("expected {N_LAYERS} layers, header says {layers}")));
        }
        if vocab == 0 || embed == 0 || hidden == 0 {
            return Err(Error::Checkpoint(format!("degenerate shape ({vocab}, {embed}, {hidden})")));
        }
        let embedding = r.matrix(vocab, embed, "embedding")?;
        let mut read_dir = |in_dim: usize| -> Result<LstmWeights<T>> {
            Ok(LstmWeights {
                w: r.matrix(4 * hidden, in_dim, "W")?,
                u: r.matrix(4 * hidden, hidden, "U")?,
                b: r.vector(4 * hidden, "b")?,
            })
        };
        let l1 = Bidirectional {
            fwd: read_dir(embed)?,
            bwd: read_dir(embed)?,
        };
        let l2 = Bidirectional {
            fwd: read_dir(2 * hidden)?,
            bwd: read_dir(2 * hidden)?,
        };
        r.expect_end()?;
        Self::from_parts(embedding, [l1, l2])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
