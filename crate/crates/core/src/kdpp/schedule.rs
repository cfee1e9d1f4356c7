//! Pre-sampled mini-batch schedules and their text format.
//!
//! ```text
//! # kdpp-schedule v1 N=360 k=5 seed=7
//! 3 41 97 200 355
//! ...
//! ```
//!
//! One line per batch, zero-based indices separated by single spaces.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kdpp::sampler::MiniBatch;

const HEADER_PREFIX: &str = "# kdpp-schedule v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub batches: Vec<MiniBatch>,
}

impl Schedule {
    pub fn new(n: usize, k: usize, seed: u64, batches: Vec<MiniBatch>) -> Result<Self> {
        for b in &batches {
            b.validate(n, k)?;
        }
        Ok(Self { n, k, seed, batches })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn header(&self) -> String {
        format!("{HEADER_PREFIX} N={} k={} seed={}", self.n, self.k, self.seed)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header())?;
        for b in &self.batches {
            let line: Vec<String> = b.indices.iter().map(usize::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, "empty schedule file")),
        };
        let (n, k, seed) = parse_header(&header).ok_or_else(|| Error::parse(path, format!("bad header `{header}`")))?;
        let mut batches = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let indices = line
                .split_whitespace()
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))?;
            let mut batch = MiniBatch::new(indices);
            batch.validate(n, k).map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))?;
            batch.seed_path = None;
            batches.push(batch);
        }
        Ok(Self { n, k, seed, batches })
    }
}

fn parse_header(line: &str) -> Option<(usize, usize, u64)> {
    let rest = line.strip_prefix(HEADER_PREFIX)?;
    let (mut n, mut k, mut seed) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        match key {
            "N" => n = value.parse().ok(),
            "k" => k = value.parse().ok(),
            "seed" => seed = value.parse().ok(),
            _ => return None,
        }
    }
    Some((n?, k?, seed?))
}
