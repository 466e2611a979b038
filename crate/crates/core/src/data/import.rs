use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{DataError, Dataset};
use crate::signal::{Label, Signal};

/// One signal per comma-separated row; ids are `<prefix>-<row>` (1-based).
pub fn import_csv_reader<R: Read>(
    input: R,
    id_prefix: &str,
    sample_rate: f64,
    label: Label,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut signals = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::RaggedRows {
                row,
                expected,
                found: record.len(),
            });
        }
        let samples = record
            .iter()
            .enumerate()
            .map(|(c, text)| {
                text.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(|v| v as f32)
                    .ok_or_else(|| DataError::ParseError {
                        row,
                        column: c + 1,
                        text: text.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        signals.push(Signal::new(
            format!("{id_prefix}-{row}"),
            label,
            sample_rate,
            samples,
        )?);
    }
    Dataset::new(signals, sample_rate)
}

/// [`import_csv_reader`] on a file, with the file stem as id prefix.
pub fn import_csv(path: &Path, sample_rate: f64, label: Label) -> Result<Dataset, DataError> {
    let prefix = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "row".into());
    import_csv_reader(File::open(path)?, &prefix, sample_rate, label)
}
