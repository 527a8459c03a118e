//! Built-in figure scenarios: data files, plot specs and confinement certificates.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::config::ScenarioConfig;
use super::run::{self, Certificate};

pub const BUILTIN: [(&str, &str); 9] = [
    ("fig1_panel1", include_str!("../../configs/fig1_panel1.toml")),
    ("fig1_panel2", include_str!("../../configs/fig1_panel2.toml")),
    ("fig1_panel3", include_str!("../../configs/fig1_panel3.toml")),
    ("fig2_panel1", include_str!("../../configs/fig2_panel1.toml")),
    ("fig2_panel2", include_str!("../../configs/fig2_panel2.toml")),
    ("fig2_panel3", include_str!("../../configs/fig2_panel3.toml")),
    ("fig3_panel1", include_str!("../../configs/fig3_panel1.toml")),
    ("fig3_panel2", include_str!("../../configs/fig3_panel2.toml")),
    ("fig3_panel3", include_str!("../../configs/fig3_panel3.toml")),
];

/// The three coordinates each panel is plotted in.
fn plot_axes(name: &str) -> [&'static str; 3] {
    match name {
        "fig1_panel1" | "fig1_panel2" => ["p_0", "p_1", "s_0_1"],
        "fig1_panel3" => ["s_0_1", "s_1_2", "csum_0_1"],
        n if n.starts_with("fig2") => ["p_V1", "p_V2", "c1"],
        _ => ["position", "parity", "n"],
    }
}

pub fn builtin_configs() -> Result<Vec<ScenarioConfig>> {
    BUILTIN.iter().map(|(_, text)| ScenarioConfig::from_toml(text)).collect()
}

/// Declarative scatter-plot description; no rendering happens here.
#[derive(Debug, Serialize)]
pub struct PlotSpec {
    pub panel: String,
    pub data: String,
    pub mark: &'static str,
    pub x: String,
    pub y: String,
    pub z: String,
    pub color: &'static str,
    pub filter: &'static str,
}

#[derive(Debug, Serialize)]
pub struct PanelResult {
    pub panel: String,
    pub n_traj: usize,
    pub n_failed: usize,
    pub wall_time_s: f64,
    pub certificate: Option<Certificate>,
    pub pass: bool,
}

/// Run each panel, writing `<panel>_trajectories.csv`, `<panel>_summary.json`
/// and `<panel>_plot.json`, plus `figures_summary.json`.
pub fn run_figures(configs: &[ScenarioConfig], out_dir: &Path) -> Result<Vec<PanelResult>> {
    std::fs::create_dir_all(out_dir)?;
    let mut results = Vec::new();
    for cfg in configs {
        let stem = cfg.stem();
        let summary = run::simulate_to(cfg, out_dir)?;
        let axes = plot_axes(&stem);
        if axes.iter().all(|a| summary.columns.iter().any(|c| c == a)) {
            let spec = PlotSpec {
                panel: stem.clone(),
                data: format!("{stem}_trajectories.csv"),
                mark: "point",
                x: axes[0].into(),
                y: axes[1].into(),
                z: axes[2].into(),
                color: "t",
                filter: "error is empty",
            };
            run::write_json(&out_dir.join(format!("{stem}_plot.json")), &spec)?;
        }
        let pass = summary.n_failed == 0 && summary.certificate.as_ref().map_or(true, |c| c.pass);
        results.push(PanelResult { panel: stem, n_traj: summary.n_traj, n_failed: summary.n_failed, wall_time_s: summary.wall_time_s, certificate: summary.certificate, pass });
    }
    run::write_json(&out_dir.join("figures_summary.json"), &results)?;
    if results.is_empty() {
        return Err(Error::Config("no figure panels to run".into()));
    }
    Ok(results)
}
