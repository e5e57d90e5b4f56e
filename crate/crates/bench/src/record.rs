use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

pub const HEADER: [&str; 12] = [
    "benchmark",
    "variant",
    "objects",
    "bin_size",
    "threads",
    "gap_percent",
    "seed",
    "rep",
    "seconds",
    "ops_per_sec",
    "bytes_reserved",
    "checksum",
];

/// One CSV row. `rep` is the repetition number, or `median`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BenchRecord {
    pub benchmark: String,
    pub variant: String,
    pub objects: usize,
    pub bin_size: u32,
    pub threads: usize,
    pub gap_percent: u8,
    pub seed: u64,
    pub rep: String,
    pub seconds: f64,
    pub ops_per_sec: f64,
    pub bytes_reserved: usize,
    pub checksum: u64,
}

/// Timings of one variant over all repetitions.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub benchmark: &'static str,
    pub variant: String,
    /// Operations per repetition; elements visited or allocated.
    pub objects: usize,
    pub bin_size: u32,
    pub threads: usize,
    pub gap_percent: u8,
    pub seconds: Vec<f64>,
    pub bytes_reserved: usize,
    pub checksum: u64,
}

impl Measurement {
    pub fn median(&self) -> f64 {
        let mut s = self.seconds.clone();
        s.sort_by(f64::total_cmp);
        match s.len() {
            0 => f64::NAN,
            n if n % 2 == 1 => s[n / 2],
            n => (s[n / 2 - 1] + s[n / 2]) / 2.0,
        }
    }

    pub fn records(&self, seed: u64) -> Vec<BenchRecord> {
        let row = |rep: String, secs: f64| BenchRecord {
            benchmark: self.benchmark.to_string(),
            variant: self.variant.clone(),
            objects: self.objects,
            bin_size: self.bin_size,
            threads: self.threads,
            gap_percent: self.gap_percent,
            seed,
            rep,
            seconds: secs,
            ops_per_sec: if secs > 0.0 { self.objects as f64 / secs } else { 0.0 },
            bytes_reserved: self.bytes_reserved,
            checksum: self.checksum,
        };
        let mut out: Vec<BenchRecord> = self
            .seconds
            .iter()
            .enumerate()
            .map(|(i, &s)| row(i.to_string(), s))
            .collect();
        out.push(row("median".into(), self.median()));
        out
    }
}

/// CSV output that appends to an existing file and writes the header only
/// when the file starts out empty.
pub struct CsvSink {
    writer: csv::Writer<Box<dyn Write>>,
}

impl CsvSink {
    pub fn append(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        Self::from_writer(Box::new(file), fresh)
    }

    pub fn stdout() -> io::Result<Self> {
        Self::from_writer(Box::new(io::stdout()), true)
    }

    fn from_writer(w: Box<dyn Write>, header: bool) -> io::Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            writer.write_record(HEADER)?;
        }
        Ok(CsvSink { writer })
    }

    pub fn write(&mut self, rec: &BenchRecord) -> io::Result<()> {
        self.writer.serialize(rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}
