//! Loss-landscape grids around a saved checkpoint.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use esam::diagnostics::{landscape, LandscapeGrid, LandscapeOptions};
use esam::model::{ParamSet, Snapshot};

use crate::config::{prepare_data, ExperimentConfig};

/// Landscape of `params` on the training split described by `cfg`.
pub fn landscape_for(cfg: &ExperimentConfig, params: &ParamSet, opts: &LandscapeOptions) -> anyhow::Result<LandscapeGrid> {
    let data = prepare_data(cfg)?;
    Ok(landscape(params, &data.train, opts)?)
}

/// Loads `checkpoint`, evaluates the grid and writes `grid.json` and
/// `grid.csv` into `out` when given.
pub fn run_landscape(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    opts: &LandscapeOptions,
    out: Option<&Path>,
) -> anyhow::Result<LandscapeGrid> {
    let params = Snapshot::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?
        .into_params()?;
    let grid = landscape_for(cfg, &params, opts)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("grid.json"), serde_json::to_string_pretty(&grid)? + "\n")?;
        let mut csv = fs::File::create(dir.join("grid.csv"))?;
        write_grid_csv(&grid, &mut csv)?;
    }
    Ok(grid)
}

/// `x y loss` triples with a blank line after each row, as gnuplot's `splot`
/// expects.
pub fn write_grid_csv<W: Write>(grid: &LandscapeGrid, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# x y loss")?;
    for (i, x) in grid.axis.iter().enumerate() {
        for (j, y) in grid.axis.iter().enumerate() {
            writeln!(out, "{x} {y} {}", grid.losses[i][j])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
