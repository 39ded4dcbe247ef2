//! Long-format, plot-ready tables derived from a finished run directory.

use std::path::Path;

use clap::ValueEnum;
use repmarket::table::Table;

use crate::output::{sha256_file, InputEntry, Manifest, RunDir};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    /// Market series of a `simulate` run.
    Timeseries,
    /// Outcome means against realized distance from a `scan` run.
    ScanCurve,
    /// Effects and per-replication values from a `factorial` run.
    FactorialTable,
    /// Mean convergence paths from a `converge` run.
    ConvergencePanel,
}

impl ExportWhat {
    pub fn name(&self) -> &'static str {
        match self {
            ExportWhat::Timeseries => "timeseries",
            ExportWhat::ScanCurve => "scan_curve",
            ExportWhat::FactorialTable => "factorial_table",
            ExportWhat::ConvergencePanel => "convergence_panel",
        }
    }
}

/// Loads a table listed in the source manifest.
fn source(run: &Path, manifest: &Manifest, name: &str, inputs: &mut Vec<InputEntry>) -> Result<Table, CliError> {
    let path = run.join(name);
    if manifest.file(name).is_none() || !path.exists() {
        return Err(repmarket::Error::MissingArtifact(path).into());
    }
    inputs.push(InputEntry { path: path.canonicalize()?.display().to_string(), sha256: sha256_file(&path)? });
    Ok(Table::read(&path)?)
}

/// Melts `value_cols` of `t` into `(key cols..., variable, value)` rows.
pub fn melt(t: &Table, keys: &[&str], value_cols: &[String], var_name: &str) -> Result<Table, CliError> {
    let key_idx = keys.iter().map(|k| t.column_index(k)).collect::<Result<Vec<_>, _>>()?;
    let val_idx = value_cols.iter().map(|k| t.column_index(k)).collect::<Result<Vec<_>, _>>()?;
    let mut header: Vec<&str> = keys.to_vec();
    header.push(var_name);
    header.push("value");
    let mut out = Table::new(&header);
    for row in &t.rows {
        for (name, &v) in value_cols.iter().zip(&val_idx) {
            let mut r: Vec<String> = key_idx.iter().map(|&i| row[i].clone()).collect();
            r.push(name.clone());
            r.push(row[v].clone());
            out.rows.push(r);
        }
    }
    Ok(out)
}

fn rest(t: &Table, keys: &[&str]) -> Vec<String> {
    t.header.iter().filter(|h| !keys.contains(&h.as_str())).cloned().collect()
}

pub fn export(run: &Path, what: ExportWhat, dir: &mut RunDir, inputs: &mut Vec<InputEntry>) -> Result<String, CliError> {
    let manifest = Manifest::read(run)?;
    let mut written = Vec::new();
    match what {
        ExportWhat::Timeseries => {
            let t = source(run, &manifest, "timeseries.tsv", inputs)?;
            let long = melt(&t, &["t"], &rest(&t, &["t"]), "series")?;
            dir.write_table("timeseries_long.tsv", &long)?;
            written.push(("timeseries_long.tsv", long.len()));
        }
        ExportWhat::ScanCurve => {
            let t = source(run, &manifest, "scan.tsv", inputs)?;
            let d = t.column("d_repr_mean_mean")?.into_iter().map(String::from).collect::<Vec<_>>();
            let mut out = Table::new(&["point", "w_sigma", "d_repr", "outcome", "mean", "se"]);
            let (pi, wi) = (t.column_index("point")?, t.column_index("w_sigma")?);
            for f in repmarket::metrics::OutcomeRecord::FIELDS {
                let (mi, si) = (t.column_index(&format!("{f}_mean"))?, t.column_index(&format!("{f}_se"))?);
                for (row, dv) in t.rows.iter().zip(&d) {
                    out.rows.push(vec![row[pi].clone(), row[wi].clone(), dv.clone(), f.to_string(), row[mi].clone(), row[si].clone()]);
                }
            }
            dir.write_table("scan_curve.tsv", &out)?;
            written.push(("scan_curve.tsv", out.len()));
        }
        ExportWhat::FactorialTable => {
            let eff = source(run, &manifest, "effects.tsv", inputs)?;
            let (oi, ti, ei, si) =
                (eff.column_index("outcome")?, eff.column_index("term")?, eff.column_index("estimate")?, eff.column_index("se")?);
            let mut outcomes: Vec<String> = Vec::new();
            let mut terms: Vec<String> = Vec::new();
            for r in &eff.rows {
                if !outcomes.contains(&r[oi]) {
                    outcomes.push(r[oi].clone());
                }
                if !terms.contains(&r[ti]) {
                    terms.push(r[ti].clone());
                }
            }
            let mut header = vec!["term".to_string()];
            for o in &outcomes {
                header.push(format!("{o}_estimate"));
                header.push(format!("{o}_se"));
            }
            let mut wide = Table::new(&header);
            for term in &terms {
                let mut row = vec![term.clone()];
                for o in &outcomes {
                    let r = eff.rows.iter().find(|r| &r[oi] == o && &r[ti] == term);
                    row.push(r.map_or("NaN".into(), |r| r[ei].clone()));
                    row.push(r.map_or("NaN".into(), |r| r[si].clone()));
                }
                wide.rows.push(row);
            }
            dir.write_table("factorial_effects.tsv", &wide)?;
            written.push(("factorial_effects.tsv", wide.len()));
            let rec = source(run, &manifest, "records.tsv", inputs)?;
            let keys = ["cell", "h_w", "h_gamma", "h_eta", "rep", "aborted"];
            let long = melt(&rec, &keys, &rest(&rec, &keys), "field")?;
            dir.write_table("factorial_long.tsv", &long)?;
            written.push(("factorial_long.tsv", long.len()));
        }
        ExportWhat::ConvergencePanel => {
            let t = source(run, &manifest, "panel.tsv", inputs)?;
            let keys = ["scenario", "nu_w", "sigma_w", "sigma_base", "t"];
            let long = melt(&t, &keys, &rest(&t, &keys), "metric")?;
            dir.write_table("convergence_long.tsv", &long)?;
            written.push(("convergence_long.tsv", long.len()));
        }
    }
    let mut s = format!("exported {} from {}\n", what.name(), run.display());
    for (f, n) in written {
        s.push_str(&format!("{f}: {n} rows\n"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn melt_keeps_keys_and_order() {
        let mut t = Table::new(&["k", "a", "b"]);
        t.rows.push(vec!["1".into(), "x".into(), "y".into()]);
        t.rows.push(vec!["2".into(), "z".into(), "w".into()]);
        let m = melt(&t, &["k"], &rest(&t, &["k"]), "var").unwrap();
        assert_eq!(m.header, vec!["k", "var", "value"]);
        assert_eq!(m.rows[1], vec!["1", "b", "y"]);
        assert_eq!(m.len(), 4);
    }
}
