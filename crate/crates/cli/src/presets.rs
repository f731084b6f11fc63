//! Built-in configurations, compiled into the binary.

use wfpc_core::dgp::FactorDesign;
use wfpc_core::montecarlo::McConfig;
use wfpc_core::{Error, Result};

const DESIGNS: &[(&str, &str)] = &[
    ("paper-7.1-nonsparse", include_str!("../../../presets/paper-7.1-nonsparse.json")),
    ("paper-7.1-sparse", include_str!("../../../presets/paper-7.1-sparse.json")),
];

const GRIDS: &[(&str, &str)] = &[
    ("paper-7.1", include_str!("../../../presets/mc-paper-7.1.json")),
    ("paper-7.1-sparse", include_str!("../../../presets/mc-paper-7.1-sparse.json")),
];

fn lookup<'a>(table: &'a [(&str, &str)], name: &str) -> Result<&'a str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, body)| *body).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        Error::InvalidInput(format!("unknown preset '{name}', expected one of {}", names.join(", ")))
    })
}

fn parse<T: serde::de::DeserializeOwned>(name: &str, body: &str) -> Result<T> {
    serde_json::from_str(body).map_err(|e| Error::Parse(format!("preset {name}: {e}")))
}

pub fn design(name: &str) -> Result<FactorDesign> {
    parse(name, lookup(DESIGNS, name)?)
}

pub fn grid(name: &str) -> Result<McConfig> {
    parse(name, lookup(GRIDS, name)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wfpc_core::dgp::{FactorDesign, LoadingMode};
    use wfpc_core::montecarlo::Experiment;

    #[test]
    fn presets_match_reference_constructors() {
        let d = design("paper-7.1-nonsparse").unwrap();
        assert_eq!(d, FactorDesign::reference(200, 200, (1.0, 0.9), LoadingMode::NonSparse, 1));
        assert_eq!(design("paper-7.1-sparse").unwrap().loading_mode, LoadingMode::Sparse);
        assert_eq!(grid("paper-7.1").unwrap(), McConfig::reference(Experiment::FactorLosses));
        assert!(design("nope").is_err());
    }
}
