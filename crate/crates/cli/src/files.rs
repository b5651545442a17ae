//! On-disk artifact formats.

use std::io::{Read, Write};
use std::path::Path;

use twomirror_core::ann::MlpModel;
use twomirror_core::beamwalk::TraceEntry;
use twomirror_core::dataset::{Dataset, SampleRecord};
use twomirror_core::optics::{Mirror, MirrorControls, Plane};
use twomirror_core::plant::{Aperture, Measurement};

use crate::error::{CliError, CliResult};
use crate::numfmt::{float, opt_float, to_json};

pub const DATASET_HEADER: [&str; 9] = [
    "cm1_yaw_rad",
    "cm1_pitch_rad",
    "cm2_yaw_rad",
    "cm2_pitch_rad",
    "dx1_mm",
    "dy1_mm",
    "dx2_mm",
    "dy2_mm",
    "complete",
];

pub const LOSS_HEADER: [&str; 2] = ["epoch", "mse"];

pub const TRACE_HEADER: [&str; 8] = [
    "reading_index",
    "mirror",
    "axis",
    "control_value",
    "dx",
    "dy",
    "aperture",
    "blocked",
];

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn finish<W: Write>(w: csv::Writer<W>) -> CliResult<W> {
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

pub fn write_dataset<W: Write>(out: W, d: &Dataset) -> CliResult<W> {
    let mut w = csv_writer(out);
    w.write_record(DATASET_HEADER).map_err(internal)?;
    for r in &d.records {
        let c = r.controls.to_array();
        let m = &r.measurement;
        let a2 = m.a2;
        let row = [
            float(c[0]),
            float(c[1]),
            float(c[2]),
            float(c[3]),
            float(m.a1[0]),
            float(m.a1[1]),
            opt_float(a2.map(|v| v[0])),
            opt_float(a2.map(|v| v[1])),
            r.complete.to_string(),
        ];
        w.write_record(&row).map_err(internal)?;
    }
    finish(w)
}

pub fn dataset_csv(d: &Dataset) -> String {
    String::from_utf8(write_dataset(Vec::new(), d).expect("in-memory CSV")).expect("ASCII CSV")
}

fn invalid(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("dataset line {line}: {msg}"))
}

/// Parses a dataset CSV. Seed and geometry tag are not part of the format
/// and come back as `0` and empty.
pub fn read_dataset<R: Read>(input: R) -> CliResult<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(|e| CliError::Config(e.to_string()))?;
    if header.iter().ne(DATASET_HEADER) {
        return Err(CliError::Config(format!("unexpected dataset header {:?}", header)));
    }
    let mut records = Vec::new();
    for (i, row) in r.records().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| invalid(line, e))?;
        if row.len() != DATASET_HEADER.len() {
            return Err(invalid(line, "wrong field count"));
        }
        let num = |k: usize| -> CliResult<f64> { row[k].parse().map_err(|e| invalid(line, format!("{}: {e}", DATASET_HEADER[k]))) };
        let opt = |k: usize| -> CliResult<Option<f64>> { if row[k].is_empty() { Ok(None) } else { num(k).map(Some) } };
        let controls = MirrorControls::from_array([num(0)?, num(1)?, num(2)?, num(3)?]);
        let a2 = match (opt(6)?, opt(7)?) {
            (Some(x), Some(y)) => Some([x, y]),
            (None, None) => None,
            _ => return Err(invalid(line, "dx2/dy2 must both be present or both empty")),
        };
        let complete: bool = row[8].parse().map_err(|_| invalid(line, "complete must be true or false"))?;
        if complete != a2.is_some() {
            return Err(invalid(line, "complete flag disagrees with aperture-2 fields"));
        }
        let measurement = Measurement { a1: [num(4)?, num(5)?], a2 };
        records.push(SampleRecord::new(controls, measurement));
    }
    Ok(Dataset {
        records,
        seed: 0,
        geometry_id: String::new(),
    })
}

pub fn loss_csv(trace: &[f64]) -> String {
    let mut w = csv_writer(Vec::new());
    w.write_record(LOSS_HEADER).expect("in-memory CSV");
    for (epoch, mse) in trace.iter().enumerate() {
        w.write_record([(epoch + 1).to_string(), float(*mse)]).expect("in-memory CSV");
    }
    String::from_utf8(finish(w).expect("in-memory CSV")).expect("ASCII CSV")
}

fn mirror_label(m: Mirror) -> &'static str {
    match m {
        Mirror::M1 => "m1",
        Mirror::M2 => "m2",
    }
}

fn aperture_label(a: Aperture) -> &'static str {
    match a {
        Aperture::A1 => "a1",
        Aperture::A2 => "a2",
    }
}

pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut w = csv_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory CSV");
    for t in trace {
        let axis = match t.axis {
            None => "",
            Some(Plane::Horizontal) => "yaw",
            Some(Plane::Vertical) => "pitch",
        };
        w.write_record([
            t.reading_index.to_string(),
            mirror_label(t.mirror).to_owned(),
            axis.to_owned(),
            float(t.control_value),
            opt_float(t.dx),
            opt_float(t.dy),
            aperture_label(t.aperture).to_owned(),
            t.blocked.to_string(),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(finish(w).expect("in-memory CSV")).expect("ASCII CSV")
}

pub fn model_json(model: &MlpModel) -> String {
    to_json(model)
}

pub fn read_model(text: &str) -> CliResult<MlpModel> {
    let m: MlpModel = serde_json::from_str(text).map_err(|e| CliError::Config(format!("model JSON: {e}")))?;
    let sizes = &m.layer_sizes;
    let shapes_ok = sizes.len() >= 2
        && m.weights.len() == sizes.len() - 1
        && m.biases.len() == sizes.len() - 1
        && sizes.windows(2).zip(&m.weights).all(|(s, w)| w.len() == s[0] * s[1])
        && sizes[1..].iter().zip(&m.biases).all(|(n, b)| b.len() == *n)
        && m.input_norm.mean.len() == sizes[0]
        && m.input_norm.std.len() == sizes[0]
        && m.output_norm.mean.len() == sizes[sizes.len() - 1]
        && m.output_norm.std.len() == sizes[sizes.len() - 1];
    if !shapes_ok || sizes[0] != 4 || sizes[sizes.len() - 1] != 4 {
        return Err(CliError::Config("model JSON has inconsistent layer shapes".into()));
    }
    Ok(m)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        let c = MirrorControls::from_array([0.1, -1.0 / 3.0, 2e-9, 0.0]);
        Dataset {
            records: vec![
                SampleRecord::new(c, Measurement { a1: [1.5, -0.1], a2: Some([3.0, 1.0 / 7.0]) }),
                SampleRecord::new(c, Measurement { a1: [20.0, 0.0], a2: None }),
            ],
            seed: 0,
            geometry_id: String::new(),
        }
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let d = sample();
        let text = dataset_csv(&d);
        assert!(text.starts_with("cm1_yaw_rad,cm1_pitch_rad,cm2_yaw_rad,cm2_pitch_rad,dx1_mm,dy1_mm,dx2_mm,dy2_mm,complete\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",,false"));
        assert!(!text.contains('\r'));
        assert_eq!(read_dataset(text.as_bytes()).unwrap(), d);
    }

    #[test]
    fn inconsistent_rows_rejected() {
        let text = dataset_csv(&sample()).replace(",,false", ",,true");
        assert!(read_dataset(text.as_bytes()).is_err());
        assert!(read_dataset("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn loss_rows_are_one_based() {
        let text = loss_csv(&[0.5, 0.25]);
        assert_eq!(text.lines().collect::<Vec<_>>(), ["epoch,mse", "1,5.0000000000000000e-1", "2,2.5000000000000000e-1"]);
    }
}
