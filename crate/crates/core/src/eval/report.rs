use std::fmt::Write;
use std::str::FromStr;

use super::{EvalError, EvalReport, KS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Fixed-width table, one row per report.
    Table,
    /// One JSON object per report.
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut out = String::new();
    match format {
        ReportFormat::Jsonl => {
            for r in reports {
                out.push_str(&serde_json::to_string(r).expect("reports serialize"));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let first = &reports[0].scope;
            let _ = writeln!(out, "# dataset={} split={}", first.dataset, first.split);
            let _ = write!(out, "{:<16} {:<10} {:>7}", "variant", "cohort", "steps");
            for k in KS {
                let _ = write!(out, " {:>7}", format!("Acc@{k}"));
            }
            let _ = writeln!(out, " {:>7}  config", "MRR");
            for r in reports {
                let _ = write!(
                    out,
                    "{:<16} {:<10} {:>7}",
                    r.scope.variant, r.scope.cohort, r.n_steps
                );
                for k in KS {
                    let _ = write!(out, " {:>7.4}", r.acc[&k]);
                }
                let _ = writeln!(out, " {:>7.4}  {}", r.mrr, r.scope.config_digest);
            }
        }
    }
    Ok(out)
}
