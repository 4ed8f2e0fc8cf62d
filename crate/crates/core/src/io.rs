//! CSV artifacts written by search and study commands.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so every file re-reads losslessly.

use std::io::{Read, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::search::{Candidate, ParetoPoint};
use crate::space::ArchGenome;

pub const HISTORY_HEADER: [&str; 7] = ["index", "genome", "accuracy", "latency_us", "macs", "params", "reward"];
pub const PARETO_HEADER: [&str; 3] = ["latency_us", "accuracy", "genome"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header: expected {expected}, got {got}")]
    Header { expected: String, got: String },
    #[error("row {row}: bad genome: {message}")]
    Genome { row: usize, message: String },
}

/// One re-read row of a history file.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub index: usize,
    pub genome: ArchGenome,
    pub accuracy: f64,
    pub latency_us: f64,
    pub macs: u64,
    pub params: u64,
    pub reward: f64,
}

#[derive(Deserialize)]
struct RawHistory {
    index: usize,
    genome: String,
    accuracy: f64,
    latency_us: f64,
    macs: u64,
    params: u64,
    reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoRow {
    pub latency_us: f64,
    pub accuracy: f64,
    pub genome: ArchGenome,
}

#[derive(Deserialize)]
struct RawPareto {
    latency_us: f64,
    accuracy: f64,
    genome: String,
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), CsvError> {
    let got = rdr.headers()?;
    if got.iter().ne(expected.iter().copied()) {
        return Err(CsvError::Header {
            expected: expected.join(","),
            got: got.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn parse_genome(row: usize, text: &str) -> Result<ArchGenome, CsvError> {
    ArchGenome::from_json(text).map_err(|e| CsvError::Genome {
        row,
        message: e.to_string(),
    })
}

pub fn write_history<W: Write>(history: &[Candidate], writer: W) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HISTORY_HEADER)?;
    for c in history {
        wtr.write_record([
            c.birth_index.to_string(),
            c.genome.to_json(),
            c.accuracy.to_string(),
            c.latency_us.to_string(),
            c.macs.to_string(),
            c.params.to_string(),
            c.reward.to_string(),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_history<R: Read>(reader: R) -> Result<Vec<HistoryRow>, CsvError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &HISTORY_HEADER)?;
    rdr.deserialize::<RawHistory>()
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw?;
            Ok(HistoryRow {
                index: raw.index,
                genome: parse_genome(i, &raw.genome)?,
                accuracy: raw.accuracy,
                latency_us: raw.latency_us,
                macs: raw.macs,
                params: raw.params,
                reward: raw.reward,
            })
        })
        .collect()
}

pub fn write_pareto<W: Write>(front: &[ParetoPoint], writer: W) -> Result<(), CsvError> {
    let rows: Vec<_> = front
        .iter()
        .map(|p| ParetoRow {
            latency_us: p.latency_us,
            accuracy: p.accuracy,
            genome: p.genome.clone(),
        })
        .collect();
    write_pareto_rows(&rows, writer)
}

pub fn write_pareto_rows<W: Write>(rows: &[ParetoRow], writer: W) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(PARETO_HEADER)?;
    for p in rows {
        wtr.write_record([p.latency_us.to_string(), p.accuracy.to_string(), p.genome.to_json()])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_pareto<R: Read>(reader: R) -> Result<Vec<ParetoRow>, CsvError> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &PARETO_HEADER)?;
    rdr.deserialize::<RawPareto>()
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw?;
            Ok(ParetoRow {
                latency_us: raw.latency_us,
                accuracy: raw.accuracy,
                genome: parse_genome(i, &raw.genome)?,
            })
        })
        .collect()
}
