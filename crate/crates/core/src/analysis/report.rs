use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// `<report>_<model-id>_<seed>`
pub fn report_stem(report: &str, model_id: &str, seed: u64) -> String {
    format!("{report}_{model_id}_{seed}")
}

pub(crate) fn write_csv_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}
