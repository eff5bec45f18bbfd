use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::DataError;

/// Uniformly sampled multichannel input/output record: the universal data
/// currency of the workbench.
///
/// Row `k` holds the input applied over `[t_k, t_k + T_s)` and the output
/// measured at `t_k`, with `t_k = k * T_s` starting at zero. Values are
/// immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    sample_period: f64,
    input_names: Vec<String>,
    output_names: Vec<String>,
    /// Row-major, len == T * n_u.
    inputs: Vec<f64>,
    /// Row-major, len == T * n_y.
    outputs: Vec<f64>,
    samples: usize,
}

impl Trajectory {
    pub fn new(
        sample_period: f64,
        input_names: Vec<String>,
        output_names: Vec<String>,
        inputs: Vec<Vec<f64>>,
        outputs: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if !(sample_period > 0.0) {
            return Err(DataError::Invalid(format!(
                "sample_period must be positive, got {sample_period}"
            )));
        }
        if inputs.len() != outputs.len() {
            return Err(DataError::Invalid(format!(
                "inputs have {} rows but outputs have {}",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.is_empty() {
            return Err(DataError::Invalid("trajectory must have at least one sample".into()));
        }
        let n_u = input_names.len();
        let n_y = output_names.len();
        let mut flat_in = Vec::with_capacity(inputs.len() * n_u);
        let mut flat_out = Vec::with_capacity(outputs.len() * n_y);
        for (k, (u, y)) in inputs.iter().zip(&outputs).enumerate() {
            if u.len() != n_u {
                return Err(DataError::Invalid(format!(
                    "input row {k} has {} entries, expected {n_u} (one per channel name)",
                    u.len()
                )));
            }
            if y.len() != n_y {
                return Err(DataError::Invalid(format!(
                    "output row {k} has {} entries, expected {n_y}",
                    y.len()
                )));
            }
            if u.iter().chain(y.iter()).any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("non-finite entry at sample row {k}")));
            }
            flat_in.extend_from_slice(u);
            flat_out.extend_from_slice(y);
        }
        let samples = inputs.len();
        Ok(Trajectory {
            sample_period,
            input_names,
            output_names,
            inputs: flat_in,
            outputs: flat_out,
            samples,
        })
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn input_row(&self, k: usize) -> &[f64] {
        let n = self.n_inputs();
        &self.inputs[k * n..(k + 1) * n]
    }

    pub fn output_row(&self, k: usize) -> &[f64] {
        let n = self.n_outputs();
        &self.outputs[k * n..(k + 1) * n]
    }

    pub fn input_rows(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        range.map(|k| self.input_row(k).to_vec()).collect()
    }

    pub fn output_rows(&self, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
        range.map(|k| self.output_row(k).to_vec()).collect()
    }

    /// One output channel as a flat series.
    pub fn output_channel(&self, ch: usize) -> Vec<f64> {
        (0..self.samples).map(|k| self.output_row(k)[ch]).collect()
    }

    /// SHA-256 over names, period, and raw sample bits; stable across runs.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.sample_period.to_bits().to_le_bytes());
        for name in self.input_names.iter().chain(&self.output_names) {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for v in self.inputs.iter().chain(&self.outputs) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Writes the CSV wire format: header `t,<inputs...>,<outputs...>`, one
    /// row per sample, time starting at zero with constant step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.extend(self.output_names.iter().cloned());
        wtr.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for k in 0..self.samples {
            row.clear();
            let t = k as f64 * self.sample_period;
            row.push(fmt_f64(t));
            row.extend(self.input_row(k).iter().map(|v| fmt_f64(*v)));
            row.extend(self.output_row(k).iter().map(|v| fmt_f64(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(file)
    }

    /// Parses the CSV wire format. The caller states how many of the data
    /// columns are inputs; the rest are outputs. The time column must be
    /// strictly increasing with constant step (tolerance 1e-9), which also
    /// fixes the sample period.
    pub fn read_csv<R: Read>(r: R, n_inputs: usize) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.is_empty() || header.get(0) != Some("t") {
            return Err(DataError::Invalid(
                "trajectory CSV must start with a 't' column".into(),
            ));
        }
        let n_cols = header.len() - 1;
        if n_inputs >= n_cols {
            return Err(DataError::Invalid(format!(
                "{n_inputs} input channels leaves no output columns (csv has {n_cols} data columns)"
            )));
        }
        let input_names: Vec<String> =
            (1..=n_inputs).map(|i| header[i].to_string()).collect();
        let output_names: Vec<String> =
            (n_inputs + 1..header.len()).map(|i| header[i].to_string()).collect();

        let mut times = Vec::new();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(DataError::Invalid(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    header.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, DataError> {
                s.parse::<f64>().map_err(|_| {
                    DataError::Invalid(format!("row {}: bad number {s:?}", line + 2))
                })
            };
            times.push(parse(&rec[0])?);
            inputs.push(
                (1..=n_inputs)
                    .map(|i| parse(&rec[i]))
                    .collect::<Result<Vec<f64>, _>>()?,
            );
            outputs.push(
                (n_inputs + 1..header.len())
                    .map(|i| parse(&rec[i]))
                    .collect::<Result<Vec<f64>, _>>()?,
            );
        }
        if times.len() < 2 {
            return Err(DataError::Invalid("trajectory CSV needs at least two rows".into()));
        }
        let step = times[1] - times[0];
        if !(step > 0.0) {
            return Err(DataError::Invalid("time column must be strictly increasing".into()));
        }
        for k in 1..times.len() {
            let d = times[k] - times[k - 1];
            if (d - step).abs() > 1e-9 {
                return Err(DataError::Invalid(format!(
                    "time step at row {} is {d}, expected constant {step} (tolerance 1e-9)",
                    k + 1
                )));
            }
        }
        Trajectory::new(step, input_names, output_names, inputs, outputs)
    }

    pub fn load_csv(path: &Path, n_inputs: usize) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        Trajectory::read_csv(file, n_inputs)
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips the exact f64
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // std's Display for f64 prints the shortest round-trip decimal
    format!("{v}")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
