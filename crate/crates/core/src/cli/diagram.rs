//! Phase diagram grids: classification of every cell, CSV and PPM output.

use std::io::{self, Write};

use serde::Serialize;

use super::config::{GridSpec, ModelConfig};
use crate::env::EnvironmentSpec;
use crate::phase::{classify, classify_indep_closed_form, critical_set, CriticalOptions, CriticalSet, Region};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub beta: f64,
    pub gamma: f64,
    pub region: Region,
    pub f: f64,
    pub closed_form_region: Region,
    pub closed_form_f: f64,
}

/// Cells in row-major order: `γ` from high to low, `β` from low to high,
/// so rows match the raster.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagramGrid {
    pub grid: GridSpec,
    pub b: u32,
    pub critical: CriticalSet,
    pub cells: Vec<Cell>,
}

impl DiagramGrid {
    pub fn width(&self) -> usize {
        self.grid.beta.steps
    }

    pub fn height(&self) -> usize {
        self.grid.gamma.steps
    }

    pub fn disagreements(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| !c.region.same_phase(c.closed_form_region))
    }
}

/// Classifies every grid cell with both classifiers.
pub fn compute(model: &ModelConfig, grid: GridSpec, b: u32, eps: f64) -> Result<DiagramGrid, String> {
    let probe = model
        .at(0.0, 0.0)
        .ok_or_else(|| "diagrams need a family with beta and gamma (gaussian, lognormal-uniform)".to_string())?;
    let fact = EnvironmentSpec::new(probe.to_model(), b)
        .map_err(|e| e.to_string())?
        .factorization()
        .expect("built-in family");
    let critical = critical_set(fact.radius, fact.phase, b, CriticalOptions::default());
    let mut cells = Vec::with_capacity(grid.beta.steps * grid.gamma.steps);
    for j in (0..grid.gamma.steps).rev() {
        let gamma = grid.gamma.value(j);
        for i in 0..grid.beta.steps {
            let beta = grid.beta.value(i);
            let env = EnvironmentSpec::new(model.at(beta, gamma).expect("family").to_model(), b)
                .map_err(|e| e.to_string())?;
            let rep = classify(&env, eps).map_err(|e| e.to_string())?;
            let cf = classify_indep_closed_form(beta, gamma, &critical, fact.radius, fact.phase, b, eps);
            cells.push(Cell {
                beta,
                gamma,
                region: rep.region,
                f: rep.predicted_f,
                closed_form_region: cf.region,
                closed_form_f: cf.predicted_f,
            });
        }
    }
    Ok(DiagramGrid {
        grid,
        b,
        critical,
        cells,
    })
}

/// CSV with the critical points as `#` comment lines ahead of the header.
pub fn write_csv<W: Write>(mut out: W, d: &DiagramGrid) -> io::Result<()> {
    let c = &d.critical;
    writeln!(out, "# b={}", d.b)?;
    writeln!(out, "# beta_0={}", c.beta_0)?;
    writeln!(out, "# beta_c={}", c.beta_c)?;
    writeln!(out, "# gamma_0={}", c.gamma_0)?;
    writeln!(out, "# gamma_c={}", c.gamma_c)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "gamma", "region", "f", "closed_form_region", "closed_form_f"])?;
    for cell in &d.cells {
        w.write_record([
            cell.beta.to_string(),
            cell.gamma.to_string(),
            cell.region.to_string(),
            cell.f.to_string(),
            cell.closed_form_region.to_string(),
            cell.closed_form_f.to_string(),
        ])?;
    }
    w.flush()
}

pub fn region_color(r: Region) -> [u8; 3] {
    match r {
        Region::R1 => [66, 133, 244],
        Region::R2a => [219, 68, 55],
        Region::R2b => [240, 128, 90],
        Region::R3 => [15, 157, 88],
        Region::Boundary => [0, 0, 0],
        Region::Undetermined => [160, 160, 160],
    }
}

/// Binary P6 raster of the generic classification, one pixel per cell.
pub fn write_ppm<W: Write>(mut out: W, d: &DiagramGrid) -> io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", d.width(), d.height())?;
    let mut buf = Vec::with_capacity(d.cells.len() * 3);
    for cell in &d.cells {
        buf.extend_from_slice(&region_color(cell.region));
    }
    out.write_all(&buf)
}
