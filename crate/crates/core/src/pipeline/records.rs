use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fem::MeshLevel;

/// Which study produced a record; fixes the CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Monomials,
    Pde,
    Convergence,
    Truncation,
}

impl Experiment {
    pub fn header(&self) -> &'static [&'static str] {
        match self {
            Experiment::Monomials => &["level", "trainsize", "error", "conf"],
            Experiment::Pde => &["level", "trainsize", "mesh", "estimate", "mc", "error", "conf"],
            Experiment::Convergence => &["elements", "law", "error"],
            Experiment::Truncation => &["modes", "law", "error"],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Monomials => "monomials",
            Experiment::Pde => "pde",
            Experiment::Convergence => "convergence",
            Experiment::Truncation => "truncation",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One point of an error study.
///
/// Only the coordinates of the producing experiment are set. When both
/// `estimate` and `mc_reference` are present, `abs_error` is their distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub experiment: Experiment,
    pub level: Option<usize>,
    pub trainsize: Option<usize>,
    pub mesh: Option<MeshLevel>,
    pub modes: Option<usize>,
    pub elements: Option<usize>,
    pub law: Option<String>,
    pub estimate: Option<f64>,
    pub mc_reference: Option<f64>,
    pub abs_error: f64,
    pub ci_halfwidth: Option<f64>,
}

impl ErrorRecord {
    fn empty(experiment: Experiment, abs_error: f64) -> Self {
        Self {
            experiment,
            level: None,
            trainsize: None,
            mesh: None,
            modes: None,
            elements: None,
            law: None,
            estimate: None,
            mc_reference: None,
            abs_error,
            ci_halfwidth: None,
        }
    }

    /// Averaged monomial error `ε_k` with the mean CI half-width.
    pub fn monomials(level: usize, trainsize: usize, error: f64, conf: f64) -> Self {
        Self { level: Some(level), trainsize: Some(trainsize), ci_halfwidth: Some(conf), ..Self::empty(Experiment::Monomials, error) }
    }

    pub fn pde(level: usize, trainsize: usize, mesh: MeshLevel, estimate: f64, mc: f64, conf: f64) -> Self {
        Self {
            level: Some(level),
            trainsize: Some(trainsize),
            mesh: Some(mesh),
            estimate: Some(estimate),
            mc_reference: Some(mc),
            ci_halfwidth: Some(conf),
            ..Self::empty(Experiment::Pde, (estimate - mc).abs())
        }
    }

    pub fn convergence(elements: usize, law: &str, error: f64) -> Self {
        Self { elements: Some(elements), law: Some(law.to_string()), ..Self::empty(Experiment::Convergence, error) }
    }

    pub fn truncation(modes: usize, law: &str, error: f64) -> Self {
        Self { modes: Some(modes), law: Some(law.to_string()), ..Self::empty(Experiment::Truncation, error) }
    }

    /// True when the error lies inside the confidence half-width.
    pub fn within_ci(&self) -> Option<bool> {
        self.ci_halfwidth.map(|c| self.abs_error <= c)
    }

    fn fields(&self) -> Vec<String> {
        let n = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let e = self.abs_error.to_string();
        match self.experiment {
            Experiment::Monomials => vec![n(self.level), n(self.trainsize), e, f(self.ci_halfwidth)],
            Experiment::Pde => vec![
                n(self.level),
                n(self.trainsize),
                self.mesh.map(|m| m.to_string()).unwrap_or_default(),
                f(self.estimate),
                f(self.mc_reference),
                e,
                f(self.ci_halfwidth),
            ],
            Experiment::Convergence => vec![n(self.elements), self.law.clone().unwrap_or_default(), e],
            Experiment::Truncation => vec![n(self.modes), self.law.clone().unwrap_or_default(), e],
        }
    }
}

/// Write records of one experiment with its header.
pub fn write_records<W: Write>(out: W, experiment: Experiment, records: &[ErrorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(experiment.header())?;
    for r in records {
        if r.experiment != experiment {
            return Err(Error::InvalidArgument(format!("{} record in a {experiment} file", r.experiment)));
        }
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} field {s:?}")))
}

/// Read records; the experiment is recognised from the header.
pub fn read_records<R: Read>(input: R) -> Result<(Experiment, Vec<ErrorRecord>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let experiment = [Experiment::Monomials, Experiment::Pde, Experiment::Convergence, Experiment::Truncation]
        .into_iter()
        .find(|e| e.header() == header.as_slice())
        .ok_or_else(|| Error::Parse(format!("unrecognised header {header:?}")))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let g = |i: usize| row.get(i).unwrap_or("");
        let rec = match experiment {
            Experiment::Monomials => ErrorRecord::monomials(
                parse(g(0), "level")?,
                parse(g(1), "trainsize")?,
                parse(g(2), "error")?,
                parse(g(3), "conf")?,
            ),
            Experiment::Pde => {
                let mut rec = ErrorRecord::pde(
                    parse(g(0), "level")?,
                    parse(g(1), "trainsize")?,
                    parse(g(2), "mesh")?,
                    parse(g(3), "estimate")?,
                    parse(g(4), "mc")?,
                    parse(g(6), "conf")?,
                );
                rec.abs_error = parse(g(5), "error")?;
                rec
            }
            Experiment::Convergence => ErrorRecord::convergence(parse(g(0), "elements")?, g(1), parse(g(2), "error")?),
            Experiment::Truncation => ErrorRecord::truncation(parse(g(0), "modes")?, g(1), parse(g(2), "error")?),
        };
        out.push(rec);
    }
    Ok((experiment, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let sets = [
            (Experiment::Monomials, vec![ErrorRecord::monomials(2, 100, 1.25e-7, 3.0e-7), ErrorRecord::monomials(4, 10000, 0.1 + 0.2, 0.0)]),
            (
                Experiment::Pde,
                vec![ErrorRecord::pde(4, 10000, MeshLevel::Coarse, 1.0123456789012345, 0.99, 0.003)],
            ),
            (Experiment::Convergence, vec![ErrorRecord::convergence(128, "bigamma", 3.3e-4)]),
            (Experiment::Truncation, vec![ErrorRecord::truncation(49, "gamma", 1e-300)]),
        ];
        for (e, recs) in sets {
            let mut buf = Vec::new();
            write_records(&mut buf, e, &recs).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with(&e.header().join(",")));
            let (e2, back) = read_records(buf.as_slice()).unwrap();
            assert_eq!(e2, e);
            assert_eq!(back, recs);
        }
    }

    #[test]
    fn pde_error_is_distance() {
        let r = ErrorRecord::pde(3, 10, MeshLevel::Medium, 0.5, 0.75, 0.1);
        assert_eq!(r.abs_error, 0.25);
        assert_eq!(r.within_ci(), Some(false));
    }

    #[test]
    fn mixed_records_rejected() {
        let r = ErrorRecord::truncation(9, "gaussian", 0.0);
        assert!(write_records(Vec::new(), Experiment::Convergence, &[r]).is_err());
        assert!(read_records("a,b\n1,2\n".as_bytes()).is_err());
    }
}
