//! Draws × observations pointwise log-likelihood storage.
//!
//! Small matrices stay in memory. Larger ones spill to an anonymous temp file
//! as little-endian f64 rows and are read back in fixed-size blocks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Values kept in memory before spilling to disk (64 MiB of f64).
pub const DEFAULT_MEMORY_LIMIT: usize = 8 * 1024 * 1024;

const IO_BLOCK: usize = 1 << 20;

#[derive(Debug)]
enum Storage {
    Memory(Vec<f64>),
    Disk { writer: Option<BufWriter<File>>, file: Option<File> },
}

#[derive(Debug)]
pub struct PointwiseLogLik {
    n_obs: usize,
    n_draws: usize,
    storage: Storage,
}

impl PointwiseLogLik {
    /// Chooses memory or disk from the expected size.
    pub fn with_capacity(n_obs: usize, expected_draws: usize, memory_limit: usize) -> Result<Self> {
        let storage = if n_obs.saturating_mul(expected_draws) <= memory_limit {
            Storage::Memory(Vec::with_capacity(n_obs * expected_draws))
        } else {
            Storage::Disk {
                writer: Some(BufWriter::with_capacity(IO_BLOCK, tempfile::tempfile()?)),
                file: None,
            }
        };
        Ok(PointwiseLogLik { n_obs, n_draws: 0, storage })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            data.extend(r.iter());
        }
        PointwiseLogLik {
            n_obs: m.ncols(),
            n_draws: m.nrows(),
            storage: Storage::Memory(data),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn on_disk(&self) -> bool {
        matches!(self.storage, Storage::Disk { .. })
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_obs {
            return Err(Error::Dimension(format!(
                "log-likelihood row has {} entries, expected {}",
                row.len(),
                self.n_obs
            )));
        }
        match &mut self.storage {
            Storage::Memory(v) => v.extend_from_slice(row),
            Storage::Disk { writer, .. } => {
                let w = writer
                    .as_mut()
                    .ok_or_else(|| Error::Config("log-likelihood store already finished".into()))?;
                for x in row {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        self.n_draws += 1;
        Ok(())
    }

    /// Flushes pending writes; required before reading a disk store.
    pub fn finish(&mut self) -> Result<()> {
        if let Storage::Disk { writer, file } = &mut self.storage {
            if let Some(w) = writer.take() {
                let f = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                *file = Some(f);
            }
        }
        Ok(())
    }

    /// Visits every draw row in order.
    pub fn for_each_row<F: FnMut(&[f64])>(&self, mut f: F) -> Result<()> {
        match &self.storage {
            Storage::Memory(v) => {
                if self.n_obs > 0 {
                    v.chunks_exact(self.n_obs).for_each(f);
                }
            }
            Storage::Disk { file, .. } => {
                let mut file = file
                    .as_ref()
                    .ok_or_else(|| Error::Config("log-likelihood store not finished".into()))?;
                file.seek(SeekFrom::Start(0))?;
                let mut reader = BufReader::with_capacity(IO_BLOCK, file);
                let mut bytes = vec![0u8; self.n_obs * 8];
                let mut row = vec![0.0; self.n_obs];
                for _ in 0..self.n_draws {
                    reader.read_exact(&mut bytes)?;
                    for (x, b) in row.iter_mut().zip(bytes.chunks_exact(8)) {
                        *x = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
                    }
                    f(&row);
                }
            }
        }
        Ok(())
    }

    /// Loads the whole matrix (draws × observations).
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(self.n_obs * self.n_draws);
        self.for_each_row(|r| data.extend_from_slice(r))?;
        Ok(DMatrix::from_row_slice(self.n_draws, self.n_obs, &data))
    }

    pub fn row_sums(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_draws);
        self.for_each_row(|r| out.push(r.iter().sum()))?;
        Ok(out)
    }
}
