use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inter-arrival time distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Poisson {
        rate: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Samples are truncated below at `floor`.
    Normal {
        mean: f64,
        std: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    /// Timestamps from a `time_seconds,kind` CSV file.
    Trace {
        path: PathBuf,
    },
}

fn default_floor() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Train,
    Infer,
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrivalProcess::Poisson { rate } if !(rate > 0.0 && rate.is_finite()) => {
                Err(Error::config("poisson rate must be positive"))
            }
            ArrivalProcess::Uniform { lo, hi } if !(lo > 0.0 && hi >= lo && hi.is_finite()) => {
                Err(Error::config("uniform bounds need 0 < lo <= hi"))
            }
            ArrivalProcess::Normal { mean, std, floor }
                if !(mean > 0.0 && std >= 0.0 && floor > 0.0) =>
            {
                Err(Error::config(
                    "normal arrivals need mean > 0, std >= 0, floor > 0",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn is_trace(&self) -> bool {
        matches!(self, ArrivalProcess::Trace { .. })
    }

    /// Draws `n` positive inter-arrival gaps.
    ///
    /// # Panics
    ///
    /// On a trace process, which has no distribution to sample.
    pub fn sample_gaps<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            ArrivalProcess::Poisson { rate } => {
                let exp = Exp::new(rate).expect("validated rate");
                (0..n)
                    .map(|_| exp.sample(rng).max(f64::MIN_POSITIVE))
                    .collect()
            }
            ArrivalProcess::Uniform { lo, hi } => (0..n)
                .map(|_| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect(),
            ArrivalProcess::Normal { mean, std, floor } => {
                let normal = Normal::new(mean, std).expect("validated normal");
                (0..n).map(|_| normal.sample(rng).max(floor)).collect()
            }
            ArrivalProcess::Trace { .. } => panic!("trace processes are read, not sampled"),
        }
    }
}

/// Reads timestamps of one kind from a trace CSV with header
/// `time_seconds,kind`. Timestamps must be non-negative and non-decreasing
/// within each kind.
pub fn read_trace(path: &Path, want: TraceKind) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text, want)
}

pub fn parse_trace(text: &str, want: TraceKind) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.len() != 2 || &header[0] != "time_seconds" || &header[1] != "kind" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `time_seconds,kind`".into(),
        });
    }
    let mut out = Vec::new();
    let mut last: Option<f64> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let time: f64 = rec[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp `{}`", &rec[0]),
        })?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {time} must be finite and >= 0"),
            });
        }
        let kind = match &rec[1] {
            "train" => TraceKind::Train,
            "infer" => TraceKind::Infer,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown kind `{other}`"),
                })
            }
        };
        if kind != want {
            continue;
        }
        if last.is_some_and(|l| time < l) {
            return Err(Error::Parse {
                line,
                msg: "timestamps must not decrease".into(),
            });
        }
        last = Some(time);
        out.push(time);
    }
    Ok(out)
}
