//! Versioned JSON text format for genomes:
//! `{version, length, nodes: [{op, in_a, in_b?}], root, sign}`.

use serde::{Deserialize, Serialize};

use super::{LossGenome, Node, Sign, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenomeFile {
    version: u32,
    length: usize,
    nodes: Vec<Node>,
    root: usize,
    sign: Sign,
}

impl GenomeFile {
    fn of(g: &LossGenome) -> Self {
        Self { version: FORMAT_VERSION, length: g.nodes.len(), nodes: g.nodes.clone(), root: g.root, sign: g.sign }
    }

    fn into_genome(self) -> Result<LossGenome> {
        if self.version != FORMAT_VERSION {
            return Err(Error::InvalidGenome(format!("unsupported genome format version {}", self.version)));
        }
        if self.length != self.nodes.len() {
            return Err(Error::InvalidGenome(format!(
                "declared length {} but {} nodes",
                self.length,
                self.nodes.len()
            )));
        }
        LossGenome::new(self.nodes, self.root, self.sign)
    }
}

impl Serialize for LossGenome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GenomeFile::of(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LossGenome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        GenomeFile::deserialize(d)?.into_genome().map_err(serde::de::Error::custom)
    }
}

impl LossGenome {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(&GenomeFile::of(self)).expect("genome serialization is infallible")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: GenomeFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_genome()
    }
}
