use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const METRICS_HEADER: &str = "run_id,step,sample_id,metric,value";

/// One metric value. `sample_id` is `-` for run-level aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub step: usize,
    pub sample_id: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(
        run_id: &str,
        step: usize,
        sample_id: impl Into<String>,
        metric: impl Into<String>,
        value: f64,
    ) -> Self {
        MetricRow {
            run_id: run_id.to_string(),
            step,
            sample_id: sample_id.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Header plus one line per row. Floats use the shortest representation
/// that round-trips, so equal values always serialize to equal bytes.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.run_id, r.step, r.sample_id, r.metric, r.value
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::invalid("metrics file lacks the expected header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("malformed metrics line '{line}'"));
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(MetricRow {
                run_id: f[0].to_string(),
                step: f[1].parse().map_err(|_| bad())?,
                sample_id: f[2].to_string(),
                metric: f[3].to_string(),
                value: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `shape d0 d1 ...\n` followed by the values as little-endian `f64`.
pub fn encode_samples(x: &Tensor) -> Vec<u8> {
    let dims: Vec<String> = x.shape().iter().map(usize::to_string).collect();
    let mut out = format!("shape {}\n", dims.join(" ")).into_bytes();
    out.reserve(8 * x.numel());
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<Tensor> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::invalid("sample file has no shape header"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::invalid("sample header is not text"))?;
    let shape: Vec<usize> = header
        .strip_prefix("shape")
        .ok_or_else(|| Error::invalid(format!("bad sample header '{header}'")))?
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::invalid(format!("bad sample header '{header}'")))
        })
        .collect::<Result<_>>()?;
    let body = &bytes[nl + 1..];
    let n: usize = shape.iter().product();
    if body.len() != 8 * n {
        return Err(Error::invalid(format!(
            "sample body holds {} bytes, header implies {}",
            body.len(),
            8 * n
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_samples(path: &Path, x: &Tensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_samples(x)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Tensor> {
    decode_samples(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "samples"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn samples(&self, name: &str) -> PathBuf {
        self.root.join("samples").join(format!("{name}.bin"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip() {
        let x = Tensor::new(vec![2, 3], vec![0.1, -2.0, 3.5, 1e-300, f64::MAX, 0.0]).unwrap();
        assert_eq!(decode_samples(&encode_samples(&x)).unwrap(), x);
        assert!(encode_samples(&x).starts_with(b"shape 2 3\n"));
        assert!(decode_samples(b"shape 2 3\n\0").is_err());
        assert!(decode_samples(b"no newline").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow::new("r", 0, "-", "forget_hit_rate", 0.1 + 0.2),
            MetricRow::new("r", 5, "forget:3", "grad_norm", 1e-17),
        ];
        let text = metrics_csv(&rows);
        assert!(text.starts_with("run_id,step,sample_id,metric,value\n"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
    }
}
