//! Text serialization of models, datasets, reconstructions and Wigner data.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64` (`1.0`, `0.128`, `2.4826e-14`). CSV output always has a header, uses
//! `,` as separator and `\n` as record terminator. The layouts are described
//! in `docs/formats.md`.

use std::io::{Read, Write};

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, PovmElement, PovmSet};
use crate::error::{Error, Result};
use crate::probe::{CoherentProbe, ProbeSet};
use crate::reconstruction::ReconstructedPovm;
use crate::simulation::TomographyDataset;
use crate::wigner::{WignerField, WignerGrid};

/// Shortest round-trip decimal form of `v`.
pub fn format_float(v: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(v).to_string()
}

fn parse_float(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: '{field}' is not a number")))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

/// Header `label,0,1,…`, then `j,m[j][0],m[j][1],…` for every row `j`.
pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>, row_label: &str) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec![row_label.to_string()];
    header.extend((0..m.ncols()).map(|n| n.to_string()));
    out.write_record(&header)?;
    for (j, row) in m.row_iter().enumerate() {
        let mut record = vec![j.to_string()];
        record.extend(row.iter().map(|&v| format_float(v)));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_matrix_csv`]; the leading index column is checked.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut input = csv_reader(r);
    let cols = input.headers()?.len().saturating_sub(1);
    if cols == 0 {
        return Err(Error::Parse("matrix CSV has no data columns".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in input.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let index = record.get(0).unwrap_or_default();
        if index.parse::<usize>().ok() != Some(rows) {
            return Err(Error::Parse(format!("line {line}: expected row index {rows}, found '{index}'")));
        }
        for field in record.iter().skip(1) {
            values.push(parse_float(field, line)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse("matrix CSV has no rows".into()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_povm_csv<W: Write>(w: W, povm: &PovmSet) -> Result<()> {
    write_matrix_csv(w, &povm.to_matrix(), "outcome")
}

pub fn read_povm_csv<R: Read>(r: R) -> Result<PovmSet> {
    PovmSet::from_rows(&read_matrix_csv(r)?)
}

const PROBE_HEADER: [&str; 5] = ["index", "mean_photon", "avg_power_W", "wavelength_m", "rep_rate_Hz"];

pub fn write_probes_csv<W: Write>(w: W, probes: &ProbeSet) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(PROBE_HEADER)?;
    for (i, p) in probes.probes().iter().enumerate() {
        out.write_record([
            i.to_string(),
            format_float(p.mean_photon()),
            format_float(p.avg_power),
            format_float(p.wavelength),
            format_float(p.rep_rate),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a probe CSV. The power column is recomputed from `mean_photon`.
pub fn read_probes_csv<R: Read>(r: R) -> Result<ProbeSet> {
    let mut input = csv_reader(r);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    if header != PROBE_HEADER {
        return Err(Error::Parse(format!("probe CSV header must be {}", PROBE_HEADER.join(","))));
    }
    let mut probes = Vec::new();
    for record in input.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mean = parse_float(&record[1], line)?;
        let wavelength = parse_float(&record[3], line)?;
        let rep_rate = parse_float(&record[4], line)?;
        probes.push(CoherentProbe::from_mean_photon(mean, wavelength, rep_rate)?);
    }
    ProbeSet::new(probes)
}

/// Header `mean_photon,shots,freq_outcome_0,…`, one row per probe.
pub fn write_dataset_csv<W: Write>(w: W, ds: &TomographyDataset) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["mean_photon".to_string(), "shots".to_string()];
    header.extend((0..ds.outcomes()).map(|j| format!("freq_outcome_{j}")));
    out.write_record(&header)?;
    for (probe, row) in ds.probes.probes().iter().zip(ds.frequencies.row_iter()) {
        let mut record = vec![format_float(probe.mean_photon()), ds.shots_per_probe.to_string()];
        record.extend(row.iter().map(|&v| format_float(v)));
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset CSV; the laser parameters are not part of the file and
/// must be supplied. The seed is not recorded and reads back as 0.
pub fn read_dataset_csv<R: Read>(r: R, wavelength: f64, rep_rate: f64) -> Result<TomographyDataset> {
    let mut input = csv_reader(r);
    let header = input.headers()?.clone();
    if header.len() < 3 || &header[0] != "mean_photon" || &header[1] != "shots" {
        return Err(Error::Parse("dataset CSV header must start with mean_photon,shots,freq_outcome_0".into()));
    }
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("freq_outcome_{j}") {
            return Err(Error::Parse(format!("dataset CSV column {} should be freq_outcome_{j}", j + 2)));
        }
    }
    let outcomes = header.len() - 2;
    let mut means = Vec::new();
    let mut freqs = Vec::new();
    let mut shots: Option<u64> = None;
    for record in input.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        means.push(parse_float(&record[0], line)?);
        let s = record[1]
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("line {line}: '{}' is not a shot count", &record[1])))?;
        if shots.is_some_and(|prev| prev != s) {
            return Err(Error::Parse(format!("line {line}: all probes must share one shot count")));
        }
        shots = Some(s);
        for field in record.iter().skip(2) {
            freqs.push(parse_float(field, line)?);
        }
    }
    if means.is_empty() {
        return Err(Error::Parse("dataset CSV has no probes".into()));
    }
    let probes = ProbeSet::from_mean_photons(&means, wavelength, rep_rate)?;
    let frequencies = DMatrix::from_row_slice(means.len(), outcomes, &freqs);
    TomographyDataset::new(probes, frequencies, shots.unwrap_or(0), 0)
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    wavelength_m: f64,
    rep_rate_hz: f64,
    shots_per_probe: u64,
    seed: u64,
    mean_photons: Vec<f64>,
    frequencies: Vec<Vec<f64>>,
}

pub fn write_dataset_json<W: Write>(w: W, ds: &TomographyDataset) -> Result<()> {
    let first = &ds.probes.probes()[0];
    let doc = DatasetJson {
        wavelength_m: first.wavelength,
        rep_rate_hz: first.rep_rate,
        shots_per_probe: ds.shots_per_probe,
        seed: ds.seed,
        mean_photons: ds.probes.mean_photons(),
        frequencies: rows(&ds.frequencies),
    };
    write_json(w, &doc)
}

pub fn read_dataset_json<R: Read>(r: R) -> Result<TomographyDataset> {
    let doc: DatasetJson = serde_json::from_reader(r)?;
    let outcomes = doc.frequencies.first().map_or(0, Vec::len);
    if doc.frequencies.iter().any(|row| row.len() != outcomes) {
        return Err(Error::Parse("dataset JSON rows have unequal lengths".into()));
    }
    let probes = ProbeSet::from_mean_photons(&doc.mean_photons, doc.wavelength_m, doc.rep_rate_hz)?;
    let flat: Vec<f64> = doc.frequencies.concat();
    let frequencies = DMatrix::from_row_slice(doc.frequencies.len(), outcomes, &flat);
    TomographyDataset::new(probes, frequencies, doc.shots_per_probe, doc.seed)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ElementJson {
    outcome: usize,
    diag: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReconstructionJson {
    outcomes: usize,
    truncation: usize,
    elements: Vec<ElementJson>,
    residual: f64,
    objective: f64,
    iterations: usize,
    converged: bool,
    stationarity: f64,
}

fn elements_json(povm: &PovmSet) -> Vec<ElementJson> {
    povm.elements()
        .iter()
        .map(|e| ElementJson {
            outcome: e.outcome_label,
            diag: e.diag.clone(),
        })
        .collect()
}

pub fn write_reconstruction_json<W: Write>(w: W, rec: &ReconstructedPovm) -> Result<()> {
    let doc = ReconstructionJson {
        outcomes: rec.povm.outcomes(),
        truncation: rec.povm.truncation(),
        elements: elements_json(&rec.povm),
        residual: rec.residual,
        objective: rec.objective,
        iterations: rec.iterations,
        converged: rec.converged,
        stationarity: rec.stationarity,
    };
    write_json(w, &doc)
}

/// Reads the POVM back out of a reconstruction JSON document.
pub fn read_reconstruction_json<R: Read>(r: R) -> Result<PovmSet> {
    let doc: ReconstructionJson = serde_json::from_reader(r)?;
    let elements = doc
        .elements
        .into_iter()
        .map(|e| PovmElement::new(e.outcome, e.diag))
        .collect::<Result<Vec<_>>>()?;
    PovmSet::with_tolerance(elements, 1e-8)
}

/// Full forward model: loss matrix, convolution matrix and POVM diagonals.
#[derive(Serialize)]
struct ModelJson {
    detector: String,
    truncation: usize,
    loss_matrix: Option<Vec<Vec<f64>>>,
    convolution_matrix: Option<Vec<Vec<f64>>>,
    povm: Vec<Vec<f64>>,
    completeness_error: f64,
}

pub fn write_model_json<W: Write>(w: W, detector: &str, model: &DetectorModel) -> Result<()> {
    let doc = ModelJson {
        detector: detector.to_string(),
        truncation: model.povm.truncation(),
        loss_matrix: model.loss.as_ref().map(|l| rows(l.entries())),
        convolution_matrix: model.conv.as_ref().map(|c| rows(c.entries())),
        povm: rows(&model.povm.to_matrix()),
        completeness_error: model.povm.completeness_error(),
    };
    write_json(w, &doc)
}

/// `x,p,W` triples, `x` varying slowest.
pub fn write_wigner_csv<W: Write>(w: W, field: &WignerField) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["x", "p", "W"])?;
    let (xs, ps) = (field.grid.xs(), field.grid.ps());
    for (i, &x) in xs.iter().enumerate() {
        for (k, &p) in ps.iter().enumerate() {
            out.write_record([format_float(x), format_float(p), format_float(field.values[(i, k)])])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Gnuplot `nonuniform matrix` layout: the first line holds the column count
/// followed by the `x` values, each further line holds one `p` followed by
/// `W(x, p)` for every `x`. Fields are separated by single spaces.
pub fn write_wigner_gnuplot<W: Write>(mut w: W, field: &WignerField) -> Result<()> {
    let (xs, ps) = (field.grid.xs(), field.grid.ps());
    let mut line = vec![xs.len().to_string()];
    line.extend(xs.iter().map(|&x| format_float(x)));
    writeln!(w, "{}", line.join(" "))?;
    for (k, &p) in ps.iter().enumerate() {
        let mut line = vec![format_float(p)];
        line.extend((0..xs.len()).map(|i| format_float(field.values[(i, k)])));
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `x,p,W` CSV back into a field on the grid it was sampled from.
pub fn read_wigner_csv<R: Read>(r: R, hbar: f64) -> Result<WignerField> {
    let mut input = csv_reader(r);
    let mut triples = Vec::new();
    for record in input.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        triples.push((parse_float(&record[0], line)?, parse_float(&record[1], line)?, parse_float(&record[2], line)?));
    }
    let count = (triples.len() as f64).sqrt().round() as usize;
    if count < 2 || count * count != triples.len() {
        return Err(Error::Parse(format!("{} samples do not form a square grid", triples.len())));
    }
    let grid = WignerGrid {
        x_min: triples[0].0,
        x_max: triples[triples.len() - 1].0,
        p_min: triples[0].1,
        p_max: triples[count - 1].1,
        points_per_axis: count,
        hbar,
    };
    grid.validate()?;
    let values = DMatrix::from_fn(count, count, |i, k| triples[i * count + k].2);
    Ok(WignerField {
        grid,
        values,
        label: String::new(),
    })
}

pub fn write_cross_section_csv<W: Write>(w: W, samples: &[(f64, f64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["r", "W"])?;
    for &(r, v) in samples {
        out.write_record([format_float(r), format_float(v)])?;
    }
    out.flush()?;
    Ok(())
}
