//! Config-file front end: a TOML or JSON file names one command and its
//! parameters, deserialized into the same argument structs the flag parser
//! fills, so both entry points execute identically.

use std::path::Path;

use serde::Deserialize;

use crate::commands::{
    self, CliError, MeasureCirculationArgs, MeasureCmd, MeasureGibbsArgs, MeasureSampleArgs,
    PlotArgs, RemainderSphereArgs, RemainderTorusArgs, SimulateArgs, StructBuildArgs,
    StructVerifyArgs, WignerArgs,
};

/// One command with its parameters, tagged by a `command` key.
#[derive(Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    WignerEval(WignerArgs),
    StructconstBuild(StructBuildArgs),
    StructconstVerify(StructVerifyArgs),
    Simulate(SimulateArgs),
    MeasureSample(MeasureSampleArgs),
    MeasureCovariance(MeasureSampleArgs),
    MeasureWick(MeasureSampleArgs),
    MeasureGibbs(MeasureGibbsArgs),
    MeasureCirculation(MeasureCirculationArgs),
    RemainderSphere(RemainderSphereArgs),
    RemainderTorus(RemainderTorusArgs),
    Plot(PlotArgs),
}

/// Parses the file by extension and executes the named command.
pub fn run_file(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)?;
    let config: RunConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config parse: {e}")))?,
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config parse: {e}")))?,
        _ => {
            return Err(CliError::Validation(format!(
                "config file must end in .toml or .json: {}",
                path.display()
            )))
        }
    };
    match config {
        RunConfig::WignerEval(args) => commands::wigner_eval(&args),
        RunConfig::StructconstBuild(args) => commands::structconst_build(&args),
        RunConfig::StructconstVerify(args) => commands::structconst_verify(&args),
        RunConfig::Simulate(args) => commands::simulate(&args),
        RunConfig::MeasureSample(args) => commands::measure(&MeasureCmd::Sample(args)),
        RunConfig::MeasureCovariance(args) => commands::measure(&MeasureCmd::Covariance(args)),
        RunConfig::MeasureWick(args) => commands::measure(&MeasureCmd::Wick(args)),
        RunConfig::MeasureGibbs(args) => commands::measure(&MeasureCmd::Gibbs(args)),
        RunConfig::MeasureCirculation(args) => {
            commands::measure(&MeasureCmd::Circulation(args))
        }
        RunConfig::RemainderSphere(args) => commands::remainder_sphere(&args),
        RunConfig::RemainderTorus(args) => commands::remainder_torus(&args),
        RunConfig::Plot(args) => commands::plot(&args),
    }
}
