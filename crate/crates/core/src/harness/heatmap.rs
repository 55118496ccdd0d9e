//! Grid-shaped occupancy tables.

use std::io::Write;

use crate::dist::StateDistribution;
use crate::error::{Error, Result};
use crate::mdp::GridSpec;

/// Value written for wall cells.
pub const WALL_SENTINEL: f64 = -1.0;

/// Writes one row per grid row: `row,col_0,...,col_{c-1}`. Free cells hold
/// their probability, walls hold `-1`.
pub fn emit_heatmap_data<W: Write>(d: &StateDistribution, grid: &GridSpec, writer: W) -> Result<()> {
    if d.num_states() != grid.num_cells() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_cells(),
            actual: d.num_states(),
            context: "heatmap distribution vs grid",
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["row".to_string()];
    header.extend((0..grid.cols).map(|c| format!("col_{c}")));
    w.write_record(&header)?;
    for r in 0..grid.rows {
        let mut row = vec![r.to_string()];
        for c in 0..grid.cols {
            let v = if grid.is_wall(r, c) { WALL_SENTINEL } else { d.probs()[grid.index(r, c)] };
            row.push(format!("{v:.17e}"));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Parses heatmap CSV back into a `rows x cols` matrix.
pub fn read_heatmap(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| f.parse().map_err(|_| Error::domain(format!("bad heatmap value `{f}`"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}
