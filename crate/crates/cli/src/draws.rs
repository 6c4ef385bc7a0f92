//! Posterior draw stores: CSV, or a compact little-endian binary layout.
//!
//! Binary layout: the magic `ARDRAWS1`, a u32 header length, a JSON header
//! `{"columns": [...], "rows": n}`, then `rows × columns` f64 values row by
//! row. Both formats start with the columns `chain` and `draw`.

use std::io::{Read, Write};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"ARDRAWS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DrawsFormat {
    Csv,
    Bin,
}

impl DrawsFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            DrawsFormat::Csv => "draws.csv",
            DrawsFormat::Bin => "draws.bin",
        }
    }
}

/// Scalar parameter traces, one block of rows per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub chain: Vec<u32>,
    /// Per parameter, aligned with `chain`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    columns: Vec<String>,
    rows: usize,
}

impl DrawTable {
    /// Stacks per-chain `(name, trace)` lists; all chains share the names.
    pub fn from_chains(chains: &[Vec<(String, Vec<f64>)>]) -> DrawTable {
        let names: Vec<String> = chains[0].iter().map(|(n, _)| n.clone()).collect();
        let mut values = vec![Vec::new(); names.len()];
        let mut chain = Vec::new();
        for (c, traces) in chains.iter().enumerate() {
            chain.extend(std::iter::repeat_n(c as u32, traces[0].1.len()));
            for (j, (_, v)) in traces.iter().enumerate() {
                values[j].extend_from_slice(v);
            }
        }
        DrawTable { names, chain, values }
    }

    pub fn n_rows(&self) -> usize {
        self.chain.len()
    }

    fn draw_index(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_rows());
        for (i, &c) in self.chain.iter().enumerate() {
            out.push(if i > 0 && self.chain[i - 1] == c { out[i - 1] + 1 } else { 0 });
        }
        out
    }

    /// Per parameter, one trace per chain in chain order.
    pub fn chain_traces(&self) -> Vec<(String, Vec<Vec<f64>>)> {
        let mut bounds = vec![0];
        for i in 1..self.n_rows() {
            if self.chain[i] != self.chain[i - 1] {
                bounds.push(i);
            }
        }
        bounds.push(self.n_rows());
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), bounds.windows(2).map(|b| v[b[0]..b[1]].to_vec()).collect()))
            .collect()
    }

    pub fn write(&self, format: DrawsFormat, w: &mut dyn Write) -> anyhow::Result<()> {
        match format {
            DrawsFormat::Csv => self.write_csv(w),
            DrawsFormat::Bin => self.write_bin(w),
        }
    }

    fn write_csv(&self, w: &mut dyn Write) -> anyhow::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (i, d) in self.draw_index().into_iter().enumerate() {
            let mut row = vec![self.chain[i].to_string(), d.to_string()];
            row.extend(self.values.iter().map(|v| v[i].to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    fn write_bin(&self, w: &mut dyn Write) -> anyhow::Result<()> {
        let mut columns = vec!["chain".to_string(), "draw".to_string()];
        columns.extend(self.names.iter().cloned());
        let header = serde_json::to_vec(&Header { columns, rows: self.n_rows() })?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (i, d) in self.draw_index().into_iter().enumerate() {
            w.write_all(&(self.chain[i] as f64).to_le_bytes())?;
            w.write_all(&(d as f64).to_le_bytes())?;
            for v in &self.values {
                w.write_all(&v[i].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads either format, telling them apart by the magic bytes.
    pub fn read(r: &mut dyn Read) -> anyhow::Result<DrawTable> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.starts_with(MAGIC) {
            Self::read_bin(&bytes[MAGIC.len()..])
        } else {
            Self::read_csv(&bytes)
        }
    }

    fn from_columns(columns: Vec<String>, mut cols: Vec<Vec<f64>>) -> anyhow::Result<DrawTable> {
        if columns.len() < 3 || columns[0] != "chain" || columns[1] != "draw" {
            bail!("draw store must start with `chain,draw` and hold at least one parameter");
        }
        let chain = cols[0]
            .iter()
            .map(|&c| if c >= 0.0 && c.fract() == 0.0 { Ok(c as u32) } else { bail!("bad chain index {c}") })
            .collect::<anyhow::Result<Vec<u32>>>()?;
        if chain.is_empty() {
            bail!("draw store has no rows");
        }
        if chain.windows(2).any(|w| w[1] < w[0]) {
            bail!("draw store rows are not grouped by chain");
        }
        let values = cols.split_off(2);
        Ok(DrawTable {
            names: columns[2..].to_vec(),
            chain,
            values,
        })
    }

    fn read_csv(bytes: &[u8]) -> anyhow::Result<DrawTable> {
        let mut rdr = csv::Reader::from_reader(bytes);
        let columns: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut cols = vec![Vec::new(); columns.len()];
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != columns.len() {
                bail!("draw row {} has {} fields, expected {}", line + 1, row.len(), columns.len());
            }
            for (j, field) in row.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .with_context(|| format!("draw row {}, column `{}`", line + 1, columns[j]))?;
                cols[j].push(v);
            }
        }
        Self::from_columns(columns, cols)
    }

    fn read_bin(bytes: &[u8]) -> anyhow::Result<DrawTable> {
        let take = |b: &[u8], n: usize| -> anyhow::Result<(Vec<u8>, usize)> {
            if b.len() < n {
                bail!("truncated binary draw store");
            }
            Ok((b[..n].to_vec(), n))
        };
        let (len, _) = take(bytes, 4)?;
        let len = u32::from_le_bytes(len.try_into().expect("four bytes")) as usize;
        let (header, _) = take(&bytes[4..], len)?;
        let header: Header = serde_json::from_slice(&header).context("binary draw store header")?;
        let body = &bytes[4 + len..];
        let width = header.columns.len();
        if body.len() != header.rows * width * 8 {
            bail!(
                "binary draw store holds {} bytes of values, expected {}",
                body.len(),
                header.rows * width * 8
            );
        }
        let mut cols = vec![Vec::with_capacity(header.rows); width];
        for (i, chunk) in body.chunks_exact(8).enumerate() {
            cols[i % width].push(f64::from_le_bytes(chunk.try_into().expect("eight bytes")));
        }
        Self::from_columns(header.columns, cols)
    }
}
