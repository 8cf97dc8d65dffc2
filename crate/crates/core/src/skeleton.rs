//! Skeleton graph representation and forward kinematics.
//!
//! A skeleton is a tree of `J` joints with rest positions; the `B = J - 1`
//! bones are the parent-child edges. Each non-root joint `j` owns the bone
//! from its parent to itself, and that bone moves with joint `j`'s global
//! transform. Each joint's local rotation pivots about its own rest
//! position in its parent's frame, so the rest pose is a fixed point of FK.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quat_to_matrix, Quat, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("skeleton needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge ({0}, {1}) references a node out of range")]
    NodeOutOfRange(usize, usize),
    #[error("duplicate edge between nodes {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("cycle detected involving node {0}")]
    Cycle(usize),
    #[error("node {0} is not reachable from the root")]
    Disconnected(usize),
    #[error("root index {0} out of range")]
    RootOutOfRange(usize),
    #[error("bone index {0} out of range (B = {1})")]
    BoneOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
}

/// Bone `b` spans rest positions of `parent_joint -> child_joint` and moves
/// with the child joint's global transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub parent_joint: usize,
    pub child_joint: usize,
}

/// Validated oriented joint tree. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    rest_positions: Vec<Vector3<f64>>,
    parents: Vec<Option<usize>>,
    root: usize,
    /// Joint indices ordered so parents precede children.
    topo_order: Vec<usize>,
    bones: Vec<Bone>,
}

impl SkeletonGraph {
    pub fn joint_count(&self) -> usize {
        self.rest_positions.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn rest_position(&self, joint: usize) -> Vector3<f64> {
        self.rest_positions[joint]
    }

    pub fn rest_positions(&self) -> &[Vector3<f64>] {
        &self.rest_positions
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// Parent array with `-1` for the root, as serialized.
    pub fn parents_sentinel(&self) -> Vec<i64> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |v| v as i64))
            .collect()
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bone_rest_endpoints(&self, bone: usize) -> (Vector3<f64>, Vector3<f64>) {
        let b = self.bones[bone];
        (
            self.rest_positions[b.parent_joint],
            self.rest_positions[b.child_joint],
        )
    }

    /// Rebuild from rest positions plus the sentinel parent array (used by
    /// checkpoints).
    pub fn from_parents(
        rest_positions: Vec<Vector3<f64>>,
        parents_sentinel: &[i64],
    ) -> Result<SkeletonGraph, SkeletonError> {
        let edges: Vec<(usize, usize)> = parents_sentinel
            .iter()
            .enumerate()
            .filter_map(|(child, &p)| (p >= 0).then_some((p as usize, child)))
            .collect();
        let root = parents_sentinel.iter().position(|&p| p < 0).unwrap_or(0);
        validate_skeleton(rest_positions, &edges, Some(root))
    }
}

/// Build and validate an oriented joint tree from raw nodes and edges.
///
/// Edges may be listed in either orientation; they are re-oriented away
/// from the root. Defaults to node 0 as root.
pub fn validate_skeleton(
    nodes: Vec<Vector3<f64>>,
    edges: &[(usize, usize)],
    root: Option<usize>,
) -> Result<SkeletonGraph, SkeletonError> {
    let j = nodes.len();
    if j < 2 {
        return Err(SkeletonError::TooFewNodes(j));
    }
    let root = root.unwrap_or(0);
    if root >= j {
        return Err(SkeletonError::RootOutOfRange(root));
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); j];
    let mut seen = std::collections::BTreeSet::new();
    for &(a, b) in edges {
        if a >= j || b >= j {
            return Err(SkeletonError::NodeOutOfRange(a, b));
        }
        if a == b {
            return Err(SkeletonError::SelfLoop(a));
        }
        let key = (a.min(b), a.max(b));
        if !seen.insert(key) {
            return Err(SkeletonError::DuplicateEdge(a, b));
        }
        adjacency[a].push(b);
        adjacency[b].push(a);
    }

    // Orient edges away from the root by BFS; an already-visited neighbor
    // that is not the parent closes a cycle.
    let mut parents: Vec<Option<usize>> = vec![None; j];
    let mut visited = vec![false; j];
    let mut topo_order = Vec::with_capacity(j);
    let mut queue = std::collections::VecDeque::new();
    visited[root] = true;
    queue.push_back(root);
    while let Some(n) = queue.pop_front() {
        topo_order.push(n);
        for &next in &adjacency[n] {
            if Some(next) == parents[n] {
                continue;
            }
            if visited[next] {
                return Err(SkeletonError::Cycle(next));
            }
            visited[next] = true;
            parents[next] = Some(n);
            queue.push_back(next);
        }
    }
    if let Some(unreached) = visited.iter().position(|v| !v) {
        return Err(SkeletonError::Disconnected(unreached));
    }

    // One bone per non-root joint, in joint-index order.
    let bones = (0..j)
        .filter_map(|child| {
            parents[child].map(|parent| Bone {
                parent_joint: parent,
                child_joint: child,
            })
        })
        .collect();

    Ok(SkeletonGraph {
        rest_positions: nodes,
        parents,
        root,
        topo_order,
        bones,
    })
}

/// Per-timestep pose: local rotation per joint plus a root translation.
#[derive(Debug, Clone)]
pub struct JointPoseSample {
    pub local_rotations: Vec<Quat>,
    pub root_translation: Vector3<f64>,
    pub time: f64,
}

impl JointPoseSample {
    pub fn rest(joint_count: usize, time: f64) -> Self {
        JointPoseSample {
            local_rotations: vec![Quat::IDENTITY; joint_count],
            root_translation: Vector3::zeros(),
            time,
        }
    }
}

/// Global rigid transform per joint produced by forward kinematics.
#[derive(Debug, Clone)]
pub struct JointGlobalTransforms {
    pub transforms: Vec<RigidTransform>,
}

impl JointGlobalTransforms {
    /// Transform a point by the bone's owning (child) joint.
    pub fn apply_global(
        &self,
        skeleton: &SkeletonGraph,
        bone: usize,
        point: &Vector3<f64>,
    ) -> Result<Vector3<f64>, SkeletonError> {
        if bone >= skeleton.bone_count() {
            return Err(SkeletonError::BoneOutOfRange(bone, skeleton.bone_count()));
        }
        let joint = skeleton.bones()[bone].child_joint;
        Ok(self.transforms[joint].apply(point))
    }
}

/// Propagate local joint rotations (about each joint's own rest position)
/// down the tree. The rest pose maps every rest position to itself; the
/// root transform additionally carries the root translation.
pub fn forward_kinematics(
    skeleton: &SkeletonGraph,
    pose: &JointPoseSample,
) -> JointGlobalTransforms {
    assert_eq!(
        pose.local_rotations.len(),
        skeleton.joint_count(),
        "pose has {} rotations for {} joints",
        pose.local_rotations.len(),
        skeleton.joint_count()
    );
    let mut transforms = vec![RigidTransform::IDENTITY; skeleton.joint_count()];
    for &j in skeleton.topo_order() {
        let rot = quat_to_matrix(&pose.local_rotations[j]).expect("validated pose quaternion");
        let mut local = RigidTransform::about_pivot(rot, &skeleton.rest_position(j));
        match skeleton.parent(j) {
            None => {
                local.translation += pose.root_translation;
                transforms[j] = local;
            }
            Some(p) => {
                transforms[j] = transforms[p].compose(&local);
            }
        }
    }
    JointGlobalTransforms { transforms }
}

/// Serialized skeleton document.
///
/// ```json
/// { "nodes": [[x, y, z], ...], "edges": [[a, b], ...], "root": 0 }
/// ```
///
/// `root` is optional (default 0). Unknown fields are accepted with a
/// warning; malformed geometry is an error.
#[derive(Debug, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub nodes: Vec<[f64; 3]>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<usize>,
    #[serde(flatten)]
    pub extra: std::collections::BTreeMap<String, serde_json::Value>,
}

impl SkeletonFile {
    pub fn from_graph(g: &SkeletonGraph) -> Self {
        SkeletonFile {
            nodes: g.rest_positions().iter().map(|p| [p.x, p.y, p.z]).collect(),
            edges: g
                .bones()
                .iter()
                .map(|b| [b.parent_joint, b.child_joint])
                .collect(),
            root: Some(g.root()),
            extra: Default::default(),
        }
    }

    pub fn parse(text: &str) -> Result<SkeletonGraph, String> {
        let file: SkeletonFile =
            serde_json::from_str(text).map_err(|e| format!("invalid skeleton file: {e}"))?;
        for key in file.extra.keys() {
            log::warn!("skeleton file: ignoring unknown field `{key}`");
        }
        if file.nodes.iter().flatten().any(|v| !v.is_finite()) {
            return Err("skeleton file: node coordinates must be finite".into());
        }
        let nodes = file
            .nodes
            .iter()
            .map(|n| Vector3::new(n[0], n[1], n[2]))
            .collect();
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        validate_skeleton(nodes, &edges, file.root)
            .map_err(|e| format!("skeleton file: {e}"))
    }
}
