//! Versioned binary checkpoint format. All floats are stored as little-
//! endian IEEE-754 bits, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::matrix::Matrix;
use crate::model::{init_params, ModelParams};
use crate::pipeline::{Checkpoint, TrainConfig};

const MAGIC: &[u8; 8] = b"PSTYLCKP";
const VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn bytes(&mut self, v: &[u8]) -> std::io::Result<()> {
        self.u32(v.len() as u32)?;
        self.inner.write_all(v)
    }
    fn matrix(&mut self, m: &Matrix) -> std::io::Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        for &v in m.values() {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn bytes(&mut self) -> std::io::Result<Vec<u8>> {
        let len = self.u32()? as usize;
        let mut b = vec![0u8; len];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn matrix(&mut self) -> std::io::Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(self.f64()?);
        }
        Ok(Matrix::from_vec(rows, cols, values))
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    let run = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
        w.inner.write_all(MAGIC)?;
        w.u32(VERSION)?;
        let c = &ckpt.config;
        w.f64(c.alpha)?;
        w.f64(c.lambda)?;
        w.f64(c.mu)?;
        w.u64(c.k as u64)?;
        w.f64(c.learning_rate)?;
        w.u64(c.max_iters as u64)?;
        w.u64(c.patience as u64)?;
        w.f64(c.min_rel_improvement)?;
        w.u64(c.train_max_side as u64)?;
        w.f64(c.eps_wct)?;
        w.u64(c.seed)?;
        for v in ckpt.content_means.iter().chain(&ckpt.style_means) {
            w.f64(*v)?;
        }
        let l = &ckpt.final_loss;
        for v in [l.recon_l21, l.sparse_h, l.mi, l.weight_decay, l.total] {
            w.f64(v)?;
        }
        w.u64(ckpt.iterations as u64)?;
        let matrices = ckpt.params.matrices();
        w.u32(matrices.len() as u32)?;
        for (name, m) in ModelParams::names().iter().zip(matrices) {
            w.bytes(name.as_bytes())?;
            w.matrix(m)?;
        }
        w.inner.flush()
    };
    run(&mut w).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let mut run = || -> std::io::Result<std::result::Result<Checkpoint, String>> {
        let mut magic = [0u8; 8];
        r.inner.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Ok(Err("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Ok(Err(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let config = TrainConfig {
            alpha: r.f64()?,
            lambda: r.f64()?,
            mu: r.f64()?,
            k: r.u64()? as usize,
            learning_rate: r.f64()?,
            max_iters: r.u64()? as usize,
            patience: r.u64()? as usize,
            min_rel_improvement: r.f64()?,
            train_max_side: r.u64()? as usize,
            eps_wct: r.f64()?,
            seed: r.u64()?,
        };
        let mut content_means = [0.0; 3];
        let mut style_means = [0.0; 3];
        for v in content_means.iter_mut().chain(style_means.iter_mut()) {
            *v = r.f64()?;
        }
        let final_loss = LossBreakdown {
            recon_l21: r.f64()?,
            sparse_h: r.f64()?,
            mi: r.f64()?,
            weight_decay: r.f64()?,
            total: r.f64()?,
        };
        let iterations = r.u64()? as usize;
        let count = r.u32()? as usize;
        let names = ModelParams::names();
        if count != names.len() {
            return Ok(Err(format!(
                "checkpoint holds {count} matrices, expected {}",
                names.len()
            )));
        }
        let mut params = init_params(0);
        let mut slots = params.matrices_mut();
        for (slot, &expected_name) in slots.iter_mut().zip(names) {
            let name = r.bytes()?;
            if name != expected_name.as_bytes() {
                return Ok(Err(format!(
                    "unexpected matrix name {:?}, expected {expected_name}",
                    String::from_utf8_lossy(&name)
                )));
            }
            let m = r.matrix()?;
            if m.shape() != slot.shape() {
                return Ok(Err(format!(
                    "matrix {expected_name} has shape {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    slot.rows(),
                    slot.cols()
                )));
            }
            **slot = m;
        }
        drop(slots);
        Ok(Ok(Checkpoint {
            params,
            config,
            content_means,
            style_means,
            final_loss,
            iterations,
        }))
    };
    match run() {
        Ok(Ok(ckpt)) => Ok(ckpt),
        Ok(Err(msg)) => Err(Error::Checkpoint(msg)),
        Err(e) => Err(io_err(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::ImageTensor;
    use crate::pipeline::train;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut img = |seed: u64| {
            let _ = seed;
            ImageTensor::new(6, 6, (0..6 * 6 * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
        };
        let cfg = TrainConfig {
            max_iters: 8,
            ..TrainConfig::default()
        };
        train(&img(1), &img(2), &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = small_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, loaded);
        // and the re-saved file is byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(path).unwrap(), std::fs::read(path2).unwrap());
    }

    #[test]
    fn rejects_garbage_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_)) | Err(Error::Io { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = load_checkpoint("/nonexistent/m.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.ckpt"));
    }
}
