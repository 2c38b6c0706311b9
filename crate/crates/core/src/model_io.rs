//! JSON model files.
//!
//! A model is one JSON document with the domain, tree structure, per-block
//! leaf counts and normalizer. Reals are written with 17 significant digits,
//! so a loaded model evaluates bit-identically to the saved one.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};

use crate::error::{Error, Result};
use crate::estimator::{FittedMfrde, Quadrature};
use crate::geometry::{AxisBox, Forest, SplitTree, MAX_DEPTH};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    #[serde(rename = "box")]
    domain: DomainRecord,
    p: u32,
    #[serde(rename = "T")]
    tree_count: usize,
    m: usize,
    #[serde(rename = "S")]
    block_count: usize,
    n: usize,
    dropped: usize,
    median_rank: usize,
    seed: u64,
    trees: Vec<Vec<u32>>,
    counts: Vec<Vec<Vec<u32>>>,
    normalizer: f64,
    quadrature: Quadrature,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRecord {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Writes floats as `d.dddddddddddddddde±x` (17 significant digits).
pub(crate) struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            CompactFormatter.write_f64(writer, value)
        }
    }
}

/// Serializes `value` as compact JSON with full-precision reals.
pub(crate) fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    value.serialize(&mut ser)?;
    Ok(out)
}

pub fn to_json(model: &FittedMfrde) -> Result<Vec<u8>> {
    let t = model.trees();
    let counts = (0..model.blocks())
        .map(|s| (0..t).map(|tt| model.counts(s, tt).to_vec()).collect())
        .collect();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        domain: DomainRecord {
            lo: model.domain().lo().to_vec(),
            hi: model.domain().hi().to_vec(),
        },
        p: model.depth(),
        tree_count: t,
        m: model.block_size(),
        block_count: model.blocks(),
        n: model.sample_size(),
        dropped: model.dropped(),
        median_rank: model.median_rank(),
        seed: model.seed(),
        trees: model
            .forest()
            .trees()
            .iter()
            .map(|tr| tr.node_dims().to_vec())
            .collect(),
        counts,
        normalizer: model.normalizer(),
        quadrature: model.quadrature(),
    };
    to_json_bytes(&file)
}

pub fn from_json(bytes: &[u8]) -> Result<FittedMfrde> {
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| Error::InvalidModel(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let domain = AxisBox::new(file.domain.lo, file.domain.hi)?;
    let d = domain.dim();
    if file.p > MAX_DEPTH {
        return Err(Error::InvalidModel(format!(
            "depth {} exceeds {MAX_DEPTH}",
            file.p
        )));
    }
    if file.tree_count == 0 || file.trees.len() != file.tree_count {
        return Err(Error::InvalidModel(format!(
            "T = {} but {} trees are stored",
            file.tree_count,
            file.trees.len()
        )));
    }
    let internal = (1usize << file.p) - 1;
    let trees = file
        .trees
        .into_iter()
        .enumerate()
        .map(|(t, dims)| {
            if dims.len() != internal {
                return Err(Error::InvalidModel(format!(
                    "tree {t} has {} split nodes, expected {internal} for depth {}",
                    dims.len(),
                    file.p
                )));
            }
            SplitTree::from_node_dims(d, dims)
                .map_err(|e| Error::InvalidModel(format!("tree {t}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if file.m == 0 || file.m > file.n {
        return Err(Error::InvalidModel(format!(
            "block size {} is invalid for n = {}",
            file.m, file.n
        )));
    }
    let s = file.n / file.m;
    if file.block_count != s {
        return Err(Error::InvalidModel(format!(
            "S = {} but n / m = {s}",
            file.block_count
        )));
    }
    if file.dropped != file.n - s * file.m {
        return Err(Error::InvalidModel(format!(
            "dropped = {} but n - S m = {}",
            file.dropped,
            file.n - s * file.m
        )));
    }
    if file.median_rank != s.div_ceil(2) {
        return Err(Error::InvalidModel(format!(
            "median_rank = {} but ceil(S/2) = {}",
            file.median_rank,
            s.div_ceil(2)
        )));
    }
    let leaves = 1usize << file.p;
    if file.counts.len() != s {
        return Err(Error::InvalidModel(format!(
            "counts hold {} blocks, expected {s}",
            file.counts.len()
        )));
    }
    let mut counts = Vec::with_capacity(s * file.tree_count * leaves);
    for (b, per_tree) in file.counts.into_iter().enumerate() {
        if per_tree.len() != file.tree_count {
            return Err(Error::InvalidModel(format!(
                "block {b} holds counts for {} trees, expected {}",
                per_tree.len(),
                file.tree_count
            )));
        }
        for (t, row) in per_tree.into_iter().enumerate() {
            if row.len() != leaves {
                return Err(Error::InvalidModel(format!(
                    "block {b} tree {t} has {} leaf counts, expected {leaves}",
                    row.len()
                )));
            }
            counts.extend(row);
        }
    }
    let forest = Forest::from_trees(domain, trees, file.seed)?;
    FittedMfrde::assemble(
        forest,
        file.n,
        file.m,
        counts,
        file.quadrature,
        file.seed,
        Some(file.normalizer),
    )
}

pub fn save_model(model: &FittedMfrde, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_json(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedMfrde> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_json(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"format_version":1,"box":{"lo":[0.0,0.0],"hi":[2.0,4.0]},
        "p":0,"T":1,"m":3,"S":1,"n":3,"dropped":0,"median_rank":1,"seed":0,
        "trees":[[]],"counts":[[[3]]],"normalizer":1.0,
        "quadrature":{"method":"exact-dyadic"}}"#;

    #[test]
    fn minimal_file_is_a_uniform_density() {
        let m = from_json(MINIMAL.as_bytes()).unwrap();
        assert_eq!(m.evaluate(&[1.0, 1.0]), 1.0 / 8.0);
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        let bytes = to_json_bytes(&vec![0.1f64, 5.0]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "[1.0000000000000001e-1,5.0000000000000000e0]"
        );
    }

    #[test]
    fn rejects_version_and_shape_errors() {
        let v2 = MINIMAL.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(
            from_json(v2.as_bytes()),
            Err(Error::FormatVersion { found: 2, .. })
        ));
        let bad_rank = MINIMAL.replace("\"median_rank\":1", "\"median_rank\":2");
        assert!(from_json(bad_rank.as_bytes()).is_err());
        let overfull = MINIMAL.replace("[[[3]]]", "[[[4]]]");
        assert!(from_json(overfull.as_bytes()).is_err());
        let bad_z = MINIMAL.replace("\"normalizer\":1.0", "\"normalizer\":0.0");
        assert!(from_json(bad_z.as_bytes()).is_err());
        let truncated = &MINIMAL[..MINIMAL.len() / 2];
        assert!(matches!(
            from_json(truncated.as_bytes()),
            Err(Error::InvalidModel(_))
        ));
    }
}
