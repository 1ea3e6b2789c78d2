//! Long-format panel CSV.
//!
//! Header `unit,t,y,x1,...,xK,t0`; one row per unit and period `t = 1..T`
//! plus a `t = 0` row holding the initial conditions. `t0 = 0` marks a
//! never-treated unit. Reals are written with 17 significant digits so a
//! write-read-write cycle is byte-identical.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Adoption, PanelData, UnitObs};
use crate::simulation::UnitLatent;

/// Shortest text that always parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn panel_header(k: usize) -> Vec<String> {
    let mut h = vec!["unit".to_string(), "t".into(), "y".into()];
    h.extend((1..=k).map(|c| format!("x{c}")));
    h.push("t0".into());
    h
}

pub fn write_panel<W: Write>(out: W, panel: &PanelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(panel_header(panel.covariates))?;
    let mut row = Vec::with_capacity(panel.covariates + 4);
    for (i, unit) in panel.units.iter().enumerate() {
        for t in 0..=panel.periods {
            row.clear();
            row.push(i.to_string());
            row.push(t.to_string());
            row.push(format_f64(unit.y_at(t)));
            row.extend(unit.x_at(t).iter().map(|v| format_f64(*v)));
            row.push(unit.t0.code().to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_file(path: &Path, panel: &PanelData) -> Result<()> {
    write_panel(BufWriter::new(File::create(path)?), panel)
}

struct Columns {
    unit: usize,
    t: usize,
    y: usize,
    x: Vec<usize>,
    t0: usize,
}

fn locate_columns(header: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (unit, t, y, t0) = (need("unit")?, need("t")?, need("y")?, need("t0")?);
    let mut x = Vec::new();
    while let Some(c) = find(&format!("x{}", x.len() + 1)) {
        x.push(c);
    }
    if x.is_empty() {
        return Err(Error::MissingColumn("x1".into()));
    }
    let known = 4 + x.len();
    if header.len() != known {
        let extra = header
            .iter()
            .enumerate()
            .find(|(i, _)| ![unit, t, y, t0].contains(i) && !x.contains(i))
            .map(|(_, h)| h.to_string())
            .unwrap_or_default();
        return Err(Error::Data {
            line: 1,
            column: extra,
            reason: "unexpected column".into(),
        });
    }
    Ok(Columns { unit, t, y, x, t0 })
}

struct Partial {
    t0: Adoption,
    rows: Vec<Option<(f64, Vec<f64>)>>,
    first_line: usize,
}

/// Reads a long-format panel. Units appear in order of first appearance;
/// rows within a unit may come in any order but every period `0..=T` must
/// be present exactly once, with one adoption date per unit.
pub fn read_panel<R: Read>(input: R) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let cols = locate_columns(&header)?;
    let k = cols.x.len();

    let mut order: Vec<String> = Vec::new();
    let mut units: HashMap<String, Partial> = HashMap::new();
    let mut max_t = 0usize;
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize, name: &str| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Data {
                line,
                column: name.to_string(),
                reason: "missing field".into(),
            })
        };
        let real = |c: usize, name: &str| -> Result<f64> {
            let s = field(c, name)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Data {
                    line,
                    column: name.to_string(),
                    reason: format!("`{s}` is not a finite number"),
                }),
            }
        };
        let int = |c: usize, name: &str| -> Result<usize> {
            let s = field(c, name)?;
            s.parse::<usize>().map_err(|_| Error::Data {
                line,
                column: name.to_string(),
                reason: format!("`{s}` is not a non-negative integer"),
            })
        };
        let id = field(cols.unit, "unit")?.to_string();
        if id.is_empty() {
            return Err(Error::Data {
                line,
                column: "unit".into(),
                reason: "empty unit identifier".into(),
            });
        }
        let t = int(cols.t, "t")?;
        let y = real(cols.y, "y")?;
        let x = cols
            .x
            .iter()
            .enumerate()
            .map(|(i, &c)| real(c, &format!("x{}", i + 1)))
            .collect::<Result<Vec<f64>>>()?;
        let t0 = int(cols.t0, "t0")?;
        max_t = max_t.max(t);
        raw.push((line, id, t, y, x, t0));
    }
    if raw.is_empty() {
        return Err(Error::InsufficientData("panel file has no rows".into()));
    }
    let periods = max_t;
    if periods == 0 {
        return Err(Error::InsufficientData(
            "panel has no periods after t = 0".into(),
        ));
    }
    for (line, id, t, y, x, t0) in raw {
        if t0 > periods {
            return Err(Error::Data {
                line,
                column: "t0".into(),
                reason: format!("adoption date {t0} exceeds the last period {periods}"),
            });
        }
        let t0 = Adoption::from_code(t0);
        let entry = units.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial {
                t0,
                rows: vec![None; periods + 1],
                first_line: line,
            }
        });
        if entry.t0 != t0 {
            return Err(Error::Data {
                line,
                column: "t0".into(),
                reason: format!(
                    "unit `{id}` changes adoption date (first seen on line {})",
                    entry.first_line
                ),
            });
        }
        if entry.rows[t].is_some() {
            return Err(Error::Data {
                line,
                column: "t".into(),
                reason: format!("duplicate period {t} for unit `{id}`"),
            });
        }
        entry.rows[t] = Some((y, x));
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let p = units.remove(&id).expect("collected above");
        if let Some(t) = p.rows.iter().position(Option::is_none) {
            return Err(Error::Data {
                line: p.first_line,
                column: "t".into(),
                reason: format!("unit `{id}` has no row for period {t}"),
            });
        }
        let mut rows = p.rows.into_iter().map(|r| r.expect("checked above"));
        let (y0, x0) = rows.next().expect("period 0");
        let mut y = Vec::with_capacity(periods);
        let mut x = Vec::with_capacity(periods * k);
        for (yt, xt) in rows {
            y.push(yt);
            x.extend_from_slice(&xt);
        }
        out.push(UnitObs {
            y0,
            x0,
            t0: p.t0,
            y,
            x,
        });
    }
    PanelData::new(periods, k, out)
}

pub fn read_panel_file(path: &Path) -> Result<PanelData> {
    read_panel(BufReader::new(File::open(path)?))
}

/// One row per unit: `unit,alpha,delta0,eps1..epsJ,u1..uT,eta{t}_{k}`.
pub fn write_latent<W: Write>(out: W, latent: &[UnitLatent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = latent.first() {
        let t_len = first.u.len();
        let k = first.eta.len().checked_div(t_len).unwrap_or(0);
        let mut h = vec!["unit".to_string(), "alpha".into(), "delta0".into()];
        h.extend((1..=first.eps.len()).map(|j| format!("eps{j}")));
        h.extend((1..=t_len).map(|t| format!("u{t}")));
        for t in 1..=t_len {
            h.extend((1..=k).map(|c| format!("eta{t}_{c}")));
        }
        w.write_record(&h)?;
    }
    for (i, l) in latent.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            format_f64(l.lambda.alpha),
            format_f64(l.lambda.delta0),
        ];
        row.extend(
            l.eps
                .iter()
                .chain(&l.u)
                .chain(&l.eta)
                .map(|v| format_f64(*v)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
