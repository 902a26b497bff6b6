//! Line-delimited dataset files.
//!
//! One instance per line, `{"p_omax":…,"agents":[{"p_cap":…,"p_dem":…},…]}`,
//! preceded by a single `#` provenance line. Readers skip `#` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem::ProblemInstance;

/// Provenance line written at the top of every output file.
pub fn header_line(seed: u64, config_digest: &str) -> String {
    format!("# {} seed={seed} config={config_digest}", crate::TOOL_VERSION)
}

pub fn format_dataset(instances: &[ProblemInstance], header: &str) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{header}").expect("writing to a String");
    for x in instances {
        out.push_str(&serde_json::to_string(x)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, instances: &[ProblemInstance], header: &str) -> Result<()> {
    let text = format_dataset(instances, header)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<ProblemInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<ProblemInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let x: ProblemInstance = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        x.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_field_order() {
        let x = ProblemInstance::from_slices(&[12.5], &[3.0], 100.0).unwrap();
        let text = format_dataset(&[x], "# h").unwrap();
        assert_eq!(
            text,
            "# h\n{\"p_omax\":100.0,\"agents\":[{\"p_cap\":12.5,\"p_dem\":3.0}]}\n"
        );
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let xs = vec![
            ProblemInstance::from_slices(&[12.345678901234567, 20.0], &[3.0, 0.1], 100.0).unwrap(),
            ProblemInstance::from_slices(&[9.0], &[27.0], 50.0).unwrap(),
        ];
        write_dataset(&path, &xs, &header_line(1, "abc")).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), xs);
    }

    #[test]
    fn bad_lines_report_position() {
        let err = parse_dataset("# h\n{\"p_omax\":1.0,\"agents\":[]}\n", Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_dataset("not json\n", Path::new("x.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
