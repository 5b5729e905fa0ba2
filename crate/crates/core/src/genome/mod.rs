//! Loss genomes: fixed-length sequences of hidden state nodes over the inputs
//! `y` (target) and `ŷ` (prediction), with a designated root and a sign gene.
//!
//! A node may only read the inputs or strictly earlier nodes, so every genome is
//! a DAG by construction. Nodes unreachable from the root are inactive; they are
//! kept as neutral material for later mutations.

mod eval;
mod io;
mod random;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Op;

pub use eval::LossGrad;
pub use random::{mutate, mutate_with, random_genome, random_genome_with, MutationKind};

/// Default number of hidden state nodes.
pub const DEFAULT_LENGTH: usize = 10;
/// Version tag of the genome text format.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceRef {
    Y,
    YHat,
    Node(usize),
}

impl Serialize for SourceRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SourceRef::Y => s.serialize_str("y"),
            SourceRef::YHat => s.serialize_str("yhat"),
            SourceRef::Node(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SourceRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(SourceRef::Node(i as usize)),
            Raw::Name(n) if n == "y" => Ok(SourceRef::Y),
            Raw::Name(n) if n == "yhat" => Ok(SourceRef::YHat),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown source `{n}` (expected \"y\", \"yhat\" or a node index)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub op: Op,
    pub in_a: SourceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_b: Option<SourceRef>,
}

impl Node {
    pub fn unary(op: Op, a: SourceRef) -> Self {
        Self { op, in_a: a, in_b: None }
    }

    pub fn binary(op: Op, a: SourceRef, b: SourceRef) -> Self {
        Self { op, in_a: a, in_b: Some(b) }
    }

    pub fn inputs(&self) -> impl Iterator<Item = SourceRef> {
        std::iter::once(self.in_a).chain(self.in_b)
    }
}

/// Sign gene applied to the reduced loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value() as i8)
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match i8::deserialize(d)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            v => Err(serde::de::Error::custom(format!("sign must be 1 or -1, got {v}"))),
        }
    }
}

/// Stable 64-bit hash of a genome's phenotype (sign + active subgraph).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct GenomeHash(pub u64);

impl fmt::Display for GenomeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl From<GenomeHash> for String {
    fn from(h: GenomeHash) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for GenomeHash {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl std::str::FromStr for GenomeHash {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        u64::from_str_radix(s, 16)
            .map(GenomeHash)
            .map_err(|e| format!("bad genome hash `{s}`: {e}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LossGenome {
    nodes: Vec<Node>,
    root: usize,
    sign: Sign,
}

impl LossGenome {
    pub fn new(nodes: Vec<Node>, root: usize, sign: Sign) -> Result<Self> {
        let g = Self { nodes, root, sign };
        g.validate()?;
        Ok(g)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    /// Checks the DAG rule, arity agreement and root bounds.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidGenome("genome has no nodes".into()));
        }
        if self.root >= self.nodes.len() {
            return Err(Error::InvalidGenome(format!(
                "root {} out of range for {} nodes",
                self.root,
                self.nodes.len()
            )));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op.is_binary() != node.in_b.is_some() {
                return Err(Error::InvalidGenome(format!(
                    "node {i}: `{}` has arity {} but {} input(s)",
                    node.op,
                    node.op.arity(),
                    node.inputs().count()
                )));
            }
            for src in node.inputs() {
                if let SourceRef::Node(j) = src {
                    if j >= i {
                        return Err(Error::InvalidGenome(format!(
                            "node {i} reads node {j}; only earlier nodes are allowed"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable backward from the root.
    pub fn active_mask(&self) -> Vec<bool> {
        let mut active = vec![false; self.nodes.len()];
        active[self.root] = true;
        for i in (0..=self.root).rev() {
            if !active[i] {
                continue;
            }
            for src in self.nodes[i].inputs() {
                if let SourceRef::Node(j) = src {
                    active[j] = true;
                }
            }
        }
        active
    }

    pub fn active_count(&self) -> usize {
        self.active_mask().iter().filter(|&&a| a).count()
    }

    /// Whether ŷ is reachable from the root.
    pub fn reads_prediction(&self) -> bool {
        let active = self.active_mask();
        self.nodes
            .iter()
            .zip(&active)
            .any(|(n, &a)| a && n.inputs().any(|s| s == SourceRef::YHat))
    }

    /// Canonical expression of the active subgraph. Independent of node
    /// placement and of argument order for commutative operations.
    pub fn expression(&self) -> String {
        let mut memo: Vec<Option<String>> = vec![None; self.nodes.len()];
        let body = self.node_expression(self.root, &mut memo);
        let s = match self.sign {
            Sign::Plus => "+",
            Sign::Minus => "-",
        };
        format!("{s}mean({body})")
    }

    fn source_expression(&self, src: SourceRef, memo: &mut Vec<Option<String>>) -> String {
        match src {
            SourceRef::Y => "y".into(),
            SourceRef::YHat => "yhat".into(),
            SourceRef::Node(j) => self.node_expression(j, memo),
        }
    }

    fn node_expression(&self, i: usize, memo: &mut Vec<Option<String>>) -> String {
        if let Some(s) = &memo[i] {
            return s.clone();
        }
        let node = self.nodes[i];
        let a = self.source_expression(node.in_a, memo);
        let s = match node.in_b {
            None => format!("{}({a})", node.op),
            Some(b) => {
                let b = self.source_expression(b, memo);
                let commutative = matches!(node.op, Op::Add | Op::Mul | Op::Max | Op::Min);
                if commutative && b < a {
                    format!("{}({b},{a})", node.op)
                } else {
                    format!("{}({a},{b})", node.op)
                }
            }
        };
        memo[i] = Some(s.clone());
        s
    }

    /// Phenotype hash used for caching and for deriving evaluation seeds.
    pub fn canonical_hash(&self) -> GenomeHash {
        let digest = Sha256::digest(self.expression().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        GenomeHash(u64::from_be_bytes(bytes))
    }

    pub(crate) fn with_parts(nodes: Vec<Node>, root: usize, sign: Sign) -> Self {
        let g = Self { nodes, root, sign };
        debug_assert!(g.validate().is_ok());
        g
    }
}

impl fmt::Display for LossGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.expression())
    }
}
