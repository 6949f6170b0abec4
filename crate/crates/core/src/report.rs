//! Comparison reports shared by the exact lab and the Monte Carlo diagnostics,
//! with their CSV and JSON forms.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::format_float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    /// The worse of two verdicts.
    pub fn and(self, other: Verdict) -> Verdict {
        self.max(other)
    }

    pub fn all<I: IntoIterator<Item = Verdict>>(it: I) -> Verdict {
        it.into_iter().fold(Verdict::Pass, Verdict::and)
    }

    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Fail => "FAIL",
        })
    }
}

/// The ordered pairs compared in every report, higher kernel first.
pub const ORDERED_PAIRS: [(&str, &str); 3] = [("M", "U"), ("U", "H"), ("U", "S")];

/// One test function's quadratic forms `<Pf, f>` for `M, U, H, S` and the
/// margins `MU = M - U`, `UH = U - H`, `US = U - S`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub f_id: String,
    pub qf_m: f64,
    pub qf_u: f64,
    pub qf_h: f64,
    pub qf_s: f64,
    pub margin_mu: f64,
    pub margin_uh: f64,
    pub margin_us: f64,
    /// Standard errors of the four forms and of the paired margins; absent for exact rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<RowErrors>,
    pub verdicts: [Verdict; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowErrors {
    pub m: f64,
    pub u: f64,
    pub h: f64,
    pub s: f64,
    pub mu: f64,
    pub uh: f64,
    pub us: f64,
}

impl ComparisonRow {
    pub fn margins(&self) -> [f64; 3] {
        [self.margin_mu, self.margin_uh, self.margin_us]
    }

    pub fn verdict(&self) -> Verdict {
        Verdict::all(self.verdicts)
    }
}

/// Paired comparison of mean square errors of sample averages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub f_id: String,
    pub higher: String,
    pub lower: String,
    pub mse_higher: f64,
    pub mse_lower: f64,
    pub stderr_higher: f64,
    pub stderr_lower: f64,
    pub difference: f64,
    pub stderr_difference: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `exact` for operator-lab reports, `monte_carlo` for estimates.
    pub kind: String,
    pub rows: Vec<ComparisonRow>,
    pub min_margins: [f64; 3],
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mse: Vec<MseRow>,
    pub verdict: Verdict,
}

impl ComparisonReport {
    pub fn new(kind: &str, rows: Vec<ComparisonRow>, mse: Vec<MseRow>) -> Self {
        let mut min_margins = [f64::INFINITY; 3];
        for r in &rows {
            for (m, v) in min_margins.iter_mut().zip(r.margins()) {
                *m = m.min(v);
            }
        }
        let verdict = Verdict::all(rows.iter().map(ComparisonRow::verdict).chain(mse.iter().map(|m| m.verdict)));
        Self {
            kind: kind.to_string(),
            rows,
            min_margins,
            mse,
            verdict,
        }
    }

    /// CSV with `f_id, qf_M, qf_U, qf_H, qf_S, margin_MU, margin_UH, margin_US`,
    /// followed by `stderr_*` columns when the rows carry standard errors.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let with_err = self.rows.iter().any(|r| r.stderr.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = vec!["f_id", "qf_M", "qf_U", "qf_H", "qf_S", "margin_MU", "margin_UH", "margin_US"];
        if with_err {
            header.extend(["stderr_M", "stderr_U", "stderr_H", "stderr_S", "stderr_MU", "stderr_UH", "stderr_US"]);
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.f_id.clone()];
            rec.extend([r.qf_m, r.qf_u, r.qf_h, r.qf_s, r.margin_mu, r.margin_uh, r.margin_us].map(format_float));
            if let Some(e) = &r.stderr {
                rec.extend([e.m, e.u, e.h, e.s, e.mu, e.uh, e.us].map(format_float));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Numerical(format!("writing report: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("writing report: {e}"))
}

/// Pretty JSON with a trailing newline; field order follows struct order.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serializing JSON: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, m: f64, u: f64, h: f64, s: f64) -> ComparisonRow {
        ComparisonRow {
            f_id: id.into(),
            qf_m: m,
            qf_u: u,
            qf_h: h,
            qf_s: s,
            margin_mu: m - u,
            margin_uh: u - h,
            margin_us: u - s,
            stderr: None,
            verdicts: [Verdict::Pass; 3],
        }
    }

    #[test]
    fn verdicts_combine_to_the_worst() {
        assert_eq!(Verdict::all([Verdict::Pass, Verdict::Inconclusive]), Verdict::Inconclusive);
        assert_eq!(Verdict::all([Verdict::Fail, Verdict::Inconclusive]), Verdict::Fail);
        assert_eq!(Verdict::all([]), Verdict::Pass);
    }

    #[test]
    fn csv_header_and_min_margins() {
        let rep = ComparisonReport::new("exact", vec![row("a", 3.0, 2.0, 1.0, 1.5), row("b", 1.0, 1.0, 1.0, 0.0)], vec![]);
        assert_eq!(rep.min_margins, [0.0, 0.0, 0.5]);
        let csv = rep.to_csv_string().unwrap();
        assert!(csv.starts_with("f_id,qf_M,qf_U,qf_H,qf_S,margin_MU,margin_UH,margin_US\n"));
        assert_eq!(csv.lines().count(), 3);
        let json = to_json(&rep).unwrap();
        assert!(json.contains("\"verdict\": \"PASS\""));
    }
}
