use std::io::Write;

use serde::Serialize;

use super::KernelSpec;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::targets::TargetDensity;

/// A realized chain with the seed and kernel that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ChainTrace {
    pub target: String,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// `n + 1` states, starting with `x0`.
    pub states: Vec<Vec<f64>>,
    /// `accepted[k]` refers to the move into `states[k]`; the initial entry is false.
    pub accepted: Vec<bool>,
    pub rejections: Vec<u64>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Writes `step,x_1..x_d,accepted` rows with floats at 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        header.push("accepted".to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (k, (x, &acc)) in self.states.iter().zip(&self.accepted).enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| format_float(*v)));
            row.push(u8::from(acc).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("writing trace: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("writing trace: {e}"))
}

/// Scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs `n` transitions from `x0` on stream 0 of `seed`.
pub fn run_chain(target: &TargetDensity, kernel: &KernelSpec, x0: &[f64], n: usize, seed: u64) -> Result<ChainTrace> {
    kernel.validate()?;
    target.require_support(x0)?;
    let mut rng = stream_rng(seed, 0);
    let mut states = Vec::with_capacity(n + 1);
    let mut accepted = Vec::with_capacity(n + 1);
    let mut rejections = Vec::with_capacity(n + 1);
    states.push(x0.to_vec());
    accepted.push(false);
    rejections.push(0);
    for index in 1..=n {
        let out = kernel
            .step(target, &states[index - 1], &mut rng)
            .map_err(|e| Error::Step { index, source: Box::new(e) })?;
        states.push(out.point);
        accepted.push(out.accepted);
        rejections.push(out.rejections);
    }
    Ok(ChainTrace {
        target: target.id().to_string(),
        kernel: kernel.clone(),
        seed,
        states,
        accepted,
        rejections,
    })
}
