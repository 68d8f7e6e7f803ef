//! Text formats for spectra and sweep tables, plus saturation data.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! reading a file back reproduces every value bit for bit.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::synth::OdmrSpectrum;

pub const SPECTRUM_MAGIC: &str = "# odmr-csv v1";
pub const SPECTRUM_HEADER: &str = "frequency_hz,signal";
pub const SWEEP_MAGIC: &str = "# sweep-csv v1";
pub const SATURATION_HEADER: &str = "power_mw,counts_cps";

/// Ordered `key=value` pairs carried in comment lines.
pub type Metadata = Vec<(String, String)>;

/// Metadata describing how a synthetic spectrum was made; empty for
/// measured data.
pub fn spectrum_metadata(spec: &OdmrSpectrum) -> Metadata {
    let Some(m) = &spec.meta else {
        return Vec::new();
    };
    let mut out: Metadata = vec![
        ("b0_t".into(), m.field.b0_t().to_string()),
        ("theta_rad".into(), m.field.theta_rad().to_string()),
        ("d_hz".into(), m.consts.d_hz().to_string()),
        ("g_factor".into(), m.consts.g_factor().to_string()),
        ("nu1_hz".into(), m.transitions.nu1_hz.to_string()),
        ("nu2_hz".into(), m.transitions.nu2_hz.to_string()),
        ("contrast".into(), m.peaks[0].amplitude.to_string()),
        ("fwhm_hz".into(), m.peaks[0].fwhm_hz.to_string()),
        ("laser_mw".into(), m.acquisition.laser_mw.to_string()),
        ("mw_dbm".into(), m.acquisition.mw_dbm.to_string()),
        ("dwell_s".into(), m.acquisition.dwell_s.to_string()),
        ("photon_rate_cps".into(), m.photon_rate_cps.to_string()),
    ];
    match (m.acquisition.seed, m.noise_sigma) {
        (Some(seed), Some(sigma)) => {
            out.push(("seed".into(), seed.to_string()));
            out.push(("noise_sigma".into(), sigma.to_string()));
        }
        _ => out.push(("noise".into(), "none".into())),
    }
    for w in &m.warnings {
        out.push(("warning".into(), format!("{w:?}")));
    }
    out
}

pub fn write_spectrum_csv<W: Write>(
    mut w: W,
    spec: &OdmrSpectrum,
    meta: &[(String, String)],
) -> io::Result<()> {
    writeln!(w, "{SPECTRUM_MAGIC}")?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{SPECTRUM_HEADER}")?;
    for (f, s) in spec.freq_hz.iter().zip(&spec.signal) {
        writeln!(w, "{f},{s}")?;
    }
    w.flush()
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

fn parse_meta(line_no: usize, body: &str) -> Result<(String, String)> {
    match body.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format_err(
            line_no,
            format!("expected `# key=value`, got `# {body}`"),
        )),
    }
}

fn parse_pair(line_no: usize, line: &str) -> Result<(f64, f64)> {
    let mut fields = line.split(',');
    let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(format_err(
            line_no,
            format!("expected two comma-separated values, got `{line}`"),
        ));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format_err(line_no, format!("`{}` is not a finite number", s.trim())))
    };
    Ok((num(a)?, num(b)?))
}

/// Parses a spectrum file and its metadata. Blank lines are ignored.
pub fn parse_spectrum_csv(text: &str) -> Result<(OdmrSpectrum, Metadata)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l.trim() == SPECTRUM_MAGIC => {}
        Some((n, l)) => {
            return Err(format_err(
                n,
                format!("expected `{SPECTRUM_MAGIC}`, got `{l}`"),
            ))
        }
        None => return Err(Error::EmptyInput),
    }
    let mut meta = Vec::new();
    let mut header_seen = false;
    let mut freq = Vec::new();
    let mut signal = Vec::new();
    for (n, line) in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(body) = t.strip_prefix('#') {
            if header_seen {
                return Err(format_err(n, "comment after the header"));
            }
            meta.push(parse_meta(n, body.trim())?);
            continue;
        }
        if !header_seen {
            if t != SPECTRUM_HEADER {
                return Err(format_err(
                    n,
                    format!("expected header `{SPECTRUM_HEADER}`, got `{t}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let (f, s) = parse_pair(n, t)?;
        if let Some(&prev) = freq.last() {
            if f <= prev {
                return Err(format_err(n, "frequencies must be strictly increasing"));
            }
        }
        freq.push(f);
        signal.push(s);
    }
    if !header_seen {
        return Err(format_err(text.lines().count(), "missing header line"));
    }
    Ok((OdmrSpectrum::from_measured(freq, signal)?, meta))
}

/// Parses `power_mw,counts_cps` rows. `#` comment lines are allowed anywhere.
pub fn parse_saturation_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut header_seen = false;
    let mut powers = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !header_seen {
            if t != SATURATION_HEADER {
                return Err(format_err(
                    n,
                    format!("expected header `{SATURATION_HEADER}`, got `{t}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let (p, c) = parse_pair(n, t)?;
        powers.push(p);
        counts.push(c);
    }
    if !header_seen {
        return Err(Error::EmptyInput);
    }
    Ok((powers, counts))
}

pub fn write_saturation_csv<W: Write>(
    mut w: W,
    powers_mw: &[f64],
    counts_cps: &[f64],
) -> io::Result<()> {
    writeln!(w, "{SATURATION_HEADER}")?;
    for (p, c) in powers_mw.iter().zip(counts_cps) {
        writeln!(w, "{p},{c}")?;
    }
    w.flush()
}

/// Writes a sweep table. Every row must have one value per column.
pub fn write_sweep_csv<W: Write>(
    mut w: W,
    meta: &[(String, String)],
    columns: &[&str],
    rows: &[Vec<f64>],
) -> io::Result<()> {
    writeln!(w, "{SWEEP_MAGIC}")?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_round_trip_is_exact() {
        let spec = OdmrSpectrum::from_measured(
            vec![1.0e8, 1.0e8 + 0.1, 2.5e8],
            vec![1e-3 / 3.0, -2.0e-7, 0.0],
        )
        .unwrap();
        let meta = vec![("seed".to_string(), "7".to_string())];
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &spec, &meta).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# odmr-csv v1\n# seed=7\nfrequency_hz,signal\n"));
        let (back, meta_back) = parse_spectrum_csv(&text).unwrap();
        assert_eq!(back.freq_hz, spec.freq_hz);
        assert_eq!(back.signal, spec.signal);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = "# odmr-csv v1\nfrequency_hz,signal\n1,2\n3,abc\n";
        match parse_spectrum_csv(text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "frequency_hz,signal\n1,2\n";
        assert!(matches!(
            parse_spectrum_csv(text),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn saturation_rows() {
        let text = "# from the bench\npower_mw,counts_cps\n1,3.1e6\n10, 3.0e7\n";
        let (p, c) = parse_saturation_csv(text).unwrap();
        assert_eq!(p, vec![1.0, 10.0]);
        assert_eq!(c, vec![3.1e6, 3.0e7]);
        assert!(matches!(
            parse_saturation_csv("power_mw,counts_cps\n1,2,3\n"),
            Err(Error::Format { line: 2, .. })
        ));
    }
}
