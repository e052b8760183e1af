//! Plain-text checkpoint format.
//!
//! ```text
//! mlp v1
//! 4 128 128 128 128 128 128 128 1
//! layer 0 weights 4 128
//! <fan_in lines of fan_out values>
//! layer 0 bias 128
//! <fan_out values>
//! ...
//! input_norm <scale offset> x4
//! target_norm <mean_db> <std_db>
//! ```
//!
//! Every number is written with 17 significant digits, which round-trips
//! an `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dense, InputNorm, MlpModel, TargetNorm, INPUT_DIM};
use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &str = "mlp v1";

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(" ")
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Parse(format!("checkpoint truncated: expected {what}")))
    }

    fn numbers(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let (no, line) = self.next(what)?;
        let values = parse_numbers(line, no)?;
        if values.len() != expected {
            return Err(Error::Parse(format!(
                "checkpoint line {no}: expected {expected} values for {what}, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn tagged(&mut self, tag: &str, expected: usize) -> Result<Vec<f64>> {
        let (no, line) = self.next(tag)?;
        let rest = line
            .strip_prefix(tag)
            .ok_or_else(|| Error::Parse(format!("checkpoint line {no}: expected `{tag}`")))?;
        let values = parse_numbers(rest, no)?;
        if values.len() != expected {
            return Err(Error::Parse(format!("checkpoint line {no}: `{tag}` needs {expected} values")));
        }
        Ok(values)
    }
}

fn parse_numbers(line: &str, no: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("checkpoint line {no}: bad number {t:?}")))
        })
        .collect()
}

impl MlpModel {
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        let dims: Vec<String> = self.layer_dims().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{}", dims.join(" ")).unwrap();
        for (k, l) in self.layers().iter().enumerate() {
            writeln!(out, "layer {k} weights {} {}", l.fan_in(), l.fan_out()).unwrap();
            for row in l.weights.rows() {
                writeln!(out, "{}", join(row.iter().copied())).unwrap();
            }
            writeln!(out, "layer {k} bias {}", l.fan_out()).unwrap();
            writeln!(out, "{}", join(l.bias.iter().copied())).unwrap();
        }
        let n = self.input_norm();
        let pairs = (0..INPUT_DIM).flat_map(|k| [n.scale[k], n.offset[k]]);
        writeln!(out, "input_norm {}", join(pairs)).unwrap();
        let t = self.target_norm();
        writeln!(out, "target_norm {}", join([t.mean_db, t.std_db])).unwrap();
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        let (_, magic) = lines.next("header")?;
        if magic != MAGIC {
            return Err(Error::Parse(format!("not a checkpoint: expected `{MAGIC}`, found {magic:?}")));
        }
        let (no, dims_line) = lines.next("layer dimensions")?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("checkpoint line {no}: bad layer width {t:?}")))
            })
            .collect::<Result<_>>()?;
        if dims.len() < 2 {
            return Err(Error::Parse("checkpoint needs at least two layer dimensions".into()));
        }

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let (no, header) = lines.next("layer header")?;
            if header != format!("layer {k} weights {fan_in} {fan_out}") {
                return Err(Error::Parse(format!("checkpoint line {no}: unexpected layer header {header:?}")));
            }
            let mut flat = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in {
                flat.extend(lines.numbers("weight row", fan_out)?);
            }
            let (no, header) = lines.next("bias header")?;
            if header != format!("layer {k} bias {fan_out}") {
                return Err(Error::Parse(format!("checkpoint line {no}: unexpected bias header {header:?}")));
            }
            let bias = lines.numbers("bias", fan_out)?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((fan_in, fan_out), flat).expect("sized"),
                bias: Array1::from(bias),
            });
        }
        let norm = lines.tagged("input_norm", 2 * INPUT_DIM)?;
        let input_norm = InputNorm {
            scale: std::array::from_fn(|k| norm[2 * k]),
            offset: std::array::from_fn(|k| norm[2 * k + 1]),
        };
        let t = lines.tagged("target_norm", 2)?;
        let target_norm = TargetNorm {
            mean_db: t[0],
            std_db: t[1],
        };
        MlpModel::from_layers(layers, input_norm, target_norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_checkpoint().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&io::read_to_string(path)?)
    }
}
