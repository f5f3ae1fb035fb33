//! Wire encoding: canonical tree/forest serialization and length-prefixed
//! frames.
//!
//! Trees travel as JSON with every float rendered as its shortest
//! round-trip decimal string, and nodes re-indexed into root-first
//! breadth-first order. That makes the encoding canonical — structurally
//! equal trees produce identical bytes regardless of how their node arrays
//! were laid out in memory — which in turn makes SHA-256 digests of the
//! merged model comparable across transports and platforms.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::StepCurve;
use crate::error::{Error, Result};
use crate::rsf::{SurvivalForest, SurvivalTree, TreeNode};
use crate::transport::Message;

/// Hard cap on one frame: 4-byte length prefix counts kind + payload.
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

pub const KIND_HELLO: u8 = 0x01;
pub const KIND_QUOTA: u8 = 0x02;
pub const KIND_TREE_UPLOAD: u8 = 0x03;
pub const KIND_COMPLETE: u8 = 0x04;
pub const KIND_ERROR: u8 = 0x7F;

/// Shortest decimal representation that parses back to the same bits.
pub fn decimal(v: f64) -> String {
    format!("{v}")
}

pub fn parse_decimal(s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Codec(format!("not a decimal number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Codec(format!("non-finite number on the wire: {s:?}")));
    }
    Ok(v)
}

// ── Canonical tree serialization ─────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTree {
    d: usize,
    nodes: Vec<WireNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum WireNode {
    Internal {
        f: usize,
        thr: String,
        l: usize,
        r: usize,
    },
    Leaf {
        times: Vec<String>,
        chf: Vec<String>,
        n: usize,
    },
}

/// Canonical byte encoding of a tree: nodes re-indexed breadth-first from
/// the root, floats as shortest round-trip decimals. Equal trees (same
/// routing structure and leaf curves) serialize to identical bytes.
pub fn serialize_tree(tree: &SurvivalTree) -> String {
    let mut order = Vec::with_capacity(tree.nodes.len());
    let mut new_id = vec![usize::MAX; tree.nodes.len()];
    let mut queue = VecDeque::from([tree.root]);
    while let Some(id) = queue.pop_front() {
        new_id[id] = order.len();
        order.push(id);
        if let TreeNode::Internal { left, right, .. } = &tree.nodes[id] {
            queue.push_back(*left);
            queue.push_back(*right);
        }
    }
    let nodes = order
        .iter()
        .map(|&id| match &tree.nodes[id] {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => WireNode::Internal {
                f: *feature,
                thr: decimal(*threshold),
                l: new_id[*left],
                r: new_id[*right],
            },
            TreeNode::Leaf { chf, n_samples } => WireNode::Leaf {
                times: chf.times().iter().copied().map(decimal).collect(),
                chf: chf.values().iter().copied().map(decimal).collect(),
                n: *n_samples,
            },
        })
        .collect();
    serde_json::to_string(&WireTree {
        d: tree.n_features,
        nodes,
    })
    .expect("tree serialization is infallible")
}

/// Inverse of [`serialize_tree`]. Rejects structural garbage: out-of-range
/// child ids, nodes referenced twice or unreachable from the root, feature
/// indices outside the declared dimension, and leaf curves that are not
/// valid cumulative hazards.
pub fn deserialize_tree(bytes: &str) -> Result<SurvivalTree> {
    let wire: WireTree =
        serde_json::from_str(bytes).map_err(|e| Error::Codec(format!("bad tree json: {e}")))?;
    if wire.nodes.is_empty() {
        return Err(Error::Codec("tree has no nodes".into()));
    }
    let n = wire.nodes.len();
    let mut nodes = Vec::with_capacity(n);
    for node in &wire.nodes {
        nodes.push(match node {
            WireNode::Internal { f, thr, l, r } => {
                if *f >= wire.d {
                    return Err(Error::Codec(format!(
                        "split feature {f} out of range for dimension {}",
                        wire.d
                    )));
                }
                TreeNode::Internal {
                    feature: *f,
                    threshold: parse_decimal(thr)?,
                    left: *l,
                    right: *r,
                }
            }
            WireNode::Leaf { times, chf, n } => {
                let times: Vec<f64> = times.iter().map(|s| parse_decimal(s)).collect::<Result<_>>()?;
                let values: Vec<f64> = chf.iter().map(|s| parse_decimal(s)).collect::<Result<_>>()?;
                let curve = StepCurve::hazard(times, values)
                    .map_err(|e| Error::Codec(format!("bad leaf curve: {e}")))?;
                TreeNode::Leaf {
                    chf: curve,
                    n_samples: *n,
                }
            }
        });
    }
    // The node array must be exactly one tree rooted at index 0.
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    let mut reached = 1;
    while let Some(id) = queue.pop_front() {
        if let TreeNode::Internal { left, right, .. } = &nodes[id] {
            for child in [*left, *right] {
                if child >= n {
                    return Err(Error::Codec(format!("dangling node id {child}")));
                }
                if seen[child] {
                    return Err(Error::Codec(format!("node {child} referenced twice")));
                }
                seen[child] = true;
                reached += 1;
                queue.push_back(child);
            }
        }
    }
    if reached != n {
        return Err(Error::Codec(format!(
            "{} of {n} nodes unreachable from the root",
            n - reached
        )));
    }
    Ok(SurvivalTree {
        nodes,
        root: 0,
        bootstrap_seed: 0,
        n_features: wire.d,
    })
}

/// Canonical encoding of a whole forest; the digest of these bytes is what
/// `Complete` frames carry.
pub fn serialize_forest(forest: &SurvivalForest) -> String {
    let grid: Vec<String> = forest
        .event_time_grid
        .iter()
        .map(|&t| format!("\"{}\"", decimal(t)))
        .collect();
    let trees: Vec<String> = forest.trees.iter().map(serialize_tree).collect();
    format!(
        "{{\"grid\":[{}],\"trees\":[{}]}}",
        grid.join(","),
        trees.join(",")
    )
}

pub fn forest_digest(forest: &SurvivalForest) -> String {
    let hash = Sha256::digest(serialize_forest(forest).as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireForest<'a> {
    grid: Vec<String>,
    #[serde(borrow)]
    trees: Vec<&'a serde_json::value::RawValue>,
}

/// Inverse of [`serialize_forest`].
pub fn deserialize_forest(bytes: &str) -> Result<SurvivalForest> {
    let wire: WireForest =
        serde_json::from_str(bytes).map_err(|e| Error::Codec(format!("bad forest json: {e}")))?;
    let grid: Vec<f64> = wire
        .grid
        .iter()
        .map(|s| parse_decimal(s))
        .collect::<Result<_>>()?;
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Codec("forest grid must be strictly increasing".into()));
    }
    if wire.trees.is_empty() {
        return Err(Error::Codec("forest has no trees".into()));
    }
    let mut trees = Vec::with_capacity(wire.trees.len());
    for raw in &wire.trees {
        trees.push(deserialize_tree(raw.get())?);
    }
    let dim = trees[0].n_features;
    if trees.iter().any(|t| t.n_features != dim) {
        return Err(Error::Codec("trees disagree on feature dimension".into()));
    }
    Ok(SurvivalForest {
        trees,
        event_time_grid: grid,
        params: None,
    })
}

// ── Frames ───────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HelloWire {
    client_id: u64,
    n_local_trees: u64,
    n_samples: u64,
    feature_dim: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuotaWire {
    client_id: u64,
    quota: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeUploadWire {
    client_id: u64,
    trees: Vec<String>,
    grid: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteWire {
    digest: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorWire {
    code: u32,
    text: String,
}

/// Encode one message as a complete frame: 4-byte big-endian length
/// (covering kind + payload), 1-byte kind, JSON payload.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    let (kind, payload) = match msg {
        Message::Hello {
            client_id,
            n_local_trees,
            n_samples,
            feature_dim,
        } => (
            KIND_HELLO,
            serde_json::to_vec(&HelloWire {
                client_id: *client_id,
                n_local_trees: *n_local_trees,
                n_samples: *n_samples,
                feature_dim: *feature_dim,
            }),
        ),
        Message::Quota { client_id, quota } => (
            KIND_QUOTA,
            serde_json::to_vec(&QuotaWire {
                client_id: *client_id,
                quota: *quota,
            }),
        ),
        Message::TreeUpload {
            client_id,
            trees,
            grid,
        } => (
            KIND_TREE_UPLOAD,
            serde_json::to_vec(&TreeUploadWire {
                client_id: *client_id,
                trees: trees.clone(),
                grid: grid.clone(),
            }),
        ),
        Message::Complete { digest } => (
            KIND_COMPLETE,
            serde_json::to_vec(&CompleteWire {
                digest: digest.clone(),
            }),
        ),
        Message::Error { code, text } => (
            KIND_ERROR,
            serde_json::to_vec(&ErrorWire {
                code: *code,
                text: text.clone(),
            }),
        ),
    };
    let payload = payload.expect("payload serialization is infallible");
    let len = 1 + payload.len();
    if len > MAX_FRAME {
        return Err(Error::Codec(format!(
            "frame of {len} bytes exceeds the {MAX_FRAME}-byte cap"
        )));
    }
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.push(kind);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decode a frame body (kind byte already split off the payload).
pub fn decode_payload(kind: u8, payload: &[u8]) -> Result<Message> {
    fn parse<'a, T: Deserialize<'a>>(payload: &'a [u8], kind: &str) -> Result<T> {
        serde_json::from_slice(payload)
            .map_err(|e| Error::Codec(format!("bad {kind} payload: {e}")))
    }
    match kind {
        KIND_HELLO => {
            let w: HelloWire = parse(payload, "Hello")?;
            Ok(Message::Hello {
                client_id: w.client_id,
                n_local_trees: w.n_local_trees,
                n_samples: w.n_samples,
                feature_dim: w.feature_dim,
            })
        }
        KIND_QUOTA => {
            let w: QuotaWire = parse(payload, "Quota")?;
            Ok(Message::Quota {
                client_id: w.client_id,
                quota: w.quota,
            })
        }
        KIND_TREE_UPLOAD => {
            let w: TreeUploadWire = parse(payload, "TreeUpload")?;
            Ok(Message::TreeUpload {
                client_id: w.client_id,
                trees: w.trees,
                grid: w.grid,
            })
        }
        KIND_COMPLETE => {
            let w: CompleteWire = parse(payload, "Complete")?;
            Ok(Message::Complete { digest: w.digest })
        }
        KIND_ERROR => {
            let w: ErrorWire = parse(payload, "Error")?;
            Ok(Message::Error {
                code: w.code,
                text: w.text,
            })
        }
        other => Err(Error::Codec(format!("unknown frame kind 0x{other:02x}"))),
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message> {
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes) as usize;
    if len == 0 {
        return Err(Error::Codec("empty frame".into()));
    }
    if len > MAX_FRAME {
        return Err(Error::Codec(format!(
            "declared frame length {len} exceeds the {MAX_FRAME}-byte cap"
        )));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_payload(body[0], &body[1..])
}
