//! Bundled miniature instances.

use super::ogf::OgfInstance;
use super::opf::OpfInstance;
use crate::error::{Error, Result};

pub const OPF_MINI_JSON: &str = include_str!("../../fixtures/opf_mini.json");
pub const OGF_MINI_JSON: &str = include_str!("../../fixtures/ogf_mini.json");

/// Three-bus power network.
pub fn opf_mini() -> OpfInstance {
    OpfInstance::from_json(OPF_MINI_JSON).expect("bundled fixture is valid")
}

/// Three-junction gas network with one compressor.
pub fn ogf_mini() -> OgfInstance {
    OgfInstance::from_json(OGF_MINI_JSON).expect("bundled fixture is valid")
}

/// Either a bundled name (`opf-mini`, `ogf-mini`) or a path to a JSON file.
pub fn load_opf(name_or_path: &str) -> Result<OpfInstance> {
    match name_or_path {
        "opf-mini" => Ok(opf_mini()),
        path => OpfInstance::from_json(&read(path)?),
    }
}

pub fn load_ogf(name_or_path: &str) -> Result<OgfInstance> {
    match name_or_path {
        "ogf-mini" => Ok(ogf_mini()),
        path => OgfInstance::from_json(&read(path)?),
    }
}

fn read(path: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
