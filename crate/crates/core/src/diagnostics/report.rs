//! CSV writers: UTF-8, LF line endings, one header line.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::{RankMeScore, SpectrumReport};
use crate::error::{Error, Result};

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Columns `index,sigma,normalized,log10_normalized`.
pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<()> {
    write_file(path, |w| {
        w.write_all(b"index,sigma,normalized,log10_normalized\n")?;
        for (i, ((s, n), l)) in
            report.sigma.iter().zip(&report.normalized).zip(&report.log10_normalized).enumerate()
        {
            writeln!(w, "{i},{s:e},{n:e},{l}")?;
        }
        Ok(())
    })
}

/// Columns `step,rankme`.
pub fn write_timeline_csv(path: &Path, timeline: &[(u64, RankMeScore)]) -> Result<()> {
    write_file(path, |w| {
        w.write_all(b"step,rankme\n")?;
        for (step, score) in timeline {
            writeln!(w, "{step},{}", score.value)?;
        }
        Ok(())
    })
}
