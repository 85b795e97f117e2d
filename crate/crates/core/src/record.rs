//! Canonical terminal-state records and their JSON / CSV forms.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symtab::{CrystalLatticeSystem, PointSymmetry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeRecord {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LatticeRecord {
    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self {
            a: p[0],
            b: p[1],
            c: p[2],
            alpha: p[3],
            beta: p[4],
            gamma: p[5],
        }
    }
}

/// Interchange form of a generated crystal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalRecord {
    pub space_group: u16,
    pub crystal_lattice_system: CrystalLatticeSystem,
    pub point_symmetry: PointSymmetry,
    pub composition: BTreeMap<String, u32>,
    pub lattice: LatticeRecord,
}

impl CrystalRecord {
    pub fn n_atoms(&self) -> u32 {
        self.composition.values().sum()
    }

    /// Lexicographic on (space group, sorted composition, lattice 6-tuple).
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.space_group
            .cmp(&other.space_group)
            .then_with(|| self.composition.iter().cmp(other.composition.iter()))
            .then_with(|| {
                let (a, b) = (self.lattice.to_array(), other.lattice.to_array());
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }
}

/// `Li:2;O:1` form used in CSV cells.
pub fn format_composition(c: &BTreeMap<String, u32>) -> String {
    c.iter()
        .map(|(s, n)| format!("{s}:{n}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_composition(s: &str) -> Result<BTreeMap<String, u32>, String> {
    let mut out = BTreeMap::new();
    if s.trim().is_empty() {
        return Ok(out);
    }
    for part in s.split(';') {
        let (sym, n) = part
            .split_once(':')
            .ok_or_else(|| format!("bad composition entry `{part}`"))?;
        let n: u32 = n
            .trim()
            .parse()
            .map_err(|_| format!("bad atom count in `{part}`"))?;
        if out.insert(sym.trim().to_string(), n).is_some() {
            return Err(format!("element {sym} listed twice"));
        }
    }
    Ok(out)
}

/// One CSV row: a record plus its energy in eV/atom.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CsvRow {
    space_group: u16,
    crystal_lattice_system: String,
    point_symmetry: String,
    composition: String,
    a: f64,
    b: f64,
    c: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    energy_ev_per_atom: f64,
}

pub const CSV_HEADER: [&str; 11] = [
    "space_group",
    "crystal_lattice_system",
    "point_symmetry",
    "composition",
    "a",
    "b",
    "c",
    "alpha",
    "beta",
    "gamma",
    "energy_ev_per_atom",
];

pub fn write_samples_csv<W: Write>(w: W, rows: &[(CrystalRecord, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    // header is written explicitly so an empty sample set still has one
    wtr.write_record(CSV_HEADER)?;
    for (r, e) in rows {
        let l = &r.lattice;
        wtr.write_record([
            r.space_group.to_string(),
            r.crystal_lattice_system.to_string(),
            r.point_symmetry.to_string(),
            format_composition(&r.composition),
            l.a.to_string(),
            l.b.to_string(),
            l.c.to_string(),
            l.alpha.to_string(),
            l.beta.to_string(),
            l.gamma.to_string(),
            e.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parse a sample or labelled-data CSV; errors carry the 1-based file line.
pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<(CrystalRecord, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {:?}", headers),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| Error::Parse { line, message };
        let cls =
            CrystalLatticeSystem::from_name(&row.crystal_lattice_system).ok_or_else(|| {
                parse_err(format!(
                    "unknown crystal-lattice system {}",
                    row.crystal_lattice_system
                ))
            })?;
        let ps = PointSymmetry::from_name(&row.point_symmetry)
            .ok_or_else(|| parse_err(format!("unknown point symmetry {}", row.point_symmetry)))?;
        let composition = parse_composition(&row.composition).map_err(parse_err)?;
        if !row.energy_ev_per_atom.is_finite() {
            return Err(parse_err("non-finite energy".into()));
        }
        out.push((
            CrystalRecord {
                space_group: row.space_group,
                crystal_lattice_system: cls,
                point_symmetry: ps,
                composition,
                lattice: LatticeRecord {
                    a: row.a,
                    b: row.b,
                    c: row.c,
                    alpha: row.alpha,
                    beta: row.beta,
                    gamma: row.gamma,
                },
            },
            row.energy_ev_per_atom,
        ));
    }
    Ok(out)
}
