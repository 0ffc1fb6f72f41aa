use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// CSV table preceded by `# key: value` lines echoing the run settings.
pub fn csv<T: Serialize>(echo: &[(&str, String)], rows: &[T]) -> Result<String, CliError> {
    let mut out = String::new();
    for (k, v) in echo {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::Pipeline(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Pipeline(format!("csv: {e}")))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

/// Writes to `out` if given, stdout otherwise.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Format(format!("stdout: {e}")))
        }
    }
}

/// Percent display for values stored in `[0, 1]`.
pub fn pct(v: f64) -> f64 {
    v * 100.0
}
