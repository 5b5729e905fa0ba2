use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::{LossGenome, Node, Sign, SourceRef};
use crate::numerics::Op;
use crate::rng::{rng_from, Rng};

/// One of the four mutation moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    ResampleOp { node: usize },
    Rewire { node: usize, second_input: bool },
    MoveRoot,
    FlipSign,
}

fn random_source(rng: &mut Rng, node: usize) -> SourceRef {
    match rng.random_range(0..node + 2) {
        0 => SourceRef::Y,
        1 => SourceRef::YHat,
        k => SourceRef::Node(k - 2),
    }
}

fn random_source_except(rng: &mut Rng, node: usize, current: SourceRef) -> SourceRef {
    loop {
        let s = random_source(rng, node);
        if s != current {
            return s;
        }
    }
}

fn random_op(rng: &mut Rng) -> Op {
    *Op::ALL.choose(rng).expect("op table is non-empty")
}

/// Uniform random genome of `length` nodes (length must be at least 2).
pub fn random_genome_with(rng: &mut Rng, length: usize) -> LossGenome {
    assert!(length >= 2, "genome length must be at least 2");
    let nodes = (0..length)
        .map(|i| {
            let op = random_op(rng);
            let in_a = random_source(rng, i);
            let in_b = op.is_binary().then(|| random_source(rng, i));
            Node { op, in_a, in_b }
        })
        .collect();
    let root = rng.random_range(0..length);
    let sign = if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus };
    LossGenome::with_parts(nodes, root, sign)
}

pub fn random_genome(seed: u64, length: usize) -> LossGenome {
    random_genome_with(&mut rng_from(seed), length)
}

/// Applies exactly one mutation, chosen uniformly among the four moves. Every
/// move changes the genotype: resampled ops, rewired sources and moved roots
/// always differ from the value they replace.
pub fn mutate_with(g: &LossGenome, rng: &mut Rng) -> (LossGenome, MutationKind) {
    let mut nodes = g.nodes.clone();
    let mut root = g.root;
    let mut sign = g.sign;
    let n = nodes.len();
    let kind = match rng.random_range(0..4) {
        0 => {
            let i = rng.random_range(0..n);
            let node = &mut nodes[i];
            let op = loop {
                let op = random_op(rng);
                if op != node.op {
                    break op;
                }
            };
            node.in_b = match (op.is_binary(), node.in_b) {
                (true, Some(b)) => Some(b),
                (true, None) => Some(random_source(rng, i)),
                (false, _) => None,
            };
            node.op = op;
            MutationKind::ResampleOp { node: i }
        }
        1 => {
            let i = rng.random_range(0..n);
            let node = &mut nodes[i];
            let second = node.in_b.is_some() && rng.random_bool(0.5);
            if second {
                let cur = node.in_b.expect("binary node");
                node.in_b = Some(random_source_except(rng, i, cur));
            } else {
                node.in_a = random_source_except(rng, i, node.in_a);
            }
            MutationKind::Rewire { node: i, second_input: second }
        }
        2 => {
            root = loop {
                let r = rng.random_range(0..n);
                if r != root {
                    break r;
                }
            };
            MutationKind::MoveRoot
        }
        _ => {
            sign = sign.flipped();
            MutationKind::FlipSign
        }
    };
    (LossGenome::with_parts(nodes, root, sign), kind)
}

pub fn mutate(g: &LossGenome, seed: u64) -> LossGenome {
    mutate_with(g, &mut rng_from(seed)).0
}
