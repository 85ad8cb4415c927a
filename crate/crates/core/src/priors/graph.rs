//! Layout of the unconstrained parameter vector.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::priors::transform::{transform_scalar, TransformSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum SegmentRole {
    /// Hyperparameter of a random field, mapped through its transform.
    Hyper { transform: TransformSpec },
    /// Physical scalar, mapped through its transform.
    Scalar { transform: TransformSpec },
    /// White noise driving a gridded random field.
    FieldNoise { nx: usize, nz: usize },
    /// White noise driving an interface process.
    InterfaceNoise,
    /// Unstructured unit-normal block.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub role: SegmentRole,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn transform(&self) -> Option<&TransformSpec> {
        match &self.role {
            SegmentRole::Hyper { transform } | SegmentRole::Scalar { transform } => Some(transform),
            _ => None,
        }
    }
}

/// Ordered, non-overlapping segments of the unconstrained vector. Every
/// entry is a priori unit normal; transforms referencing other scalars may
/// only refer to segments added earlier, so evaluation order is acyclic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorGraph {
    segments: Vec<Segment>,
}

impl PriorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single latent block of dimension `n`.
    pub fn standard_normal(n: usize) -> Self {
        let mut g = Self::new();
        g.push_block("theta", SegmentRole::Latent, n)
            .expect("fresh graph");
        g
    }

    pub fn dim(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn push_scalar(&mut self, name: &str, role: SegmentRole) -> Result<()> {
        let transform = match &role {
            SegmentRole::Hyper { transform } | SegmentRole::Scalar { transform } => transform,
            _ => {
                return Err(EkiError::InvalidArgument(format!(
                    "scalar segment '{name}' needs a transform role"
                )))
            }
        };
        for r in transform.references() {
            match self.segment(r) {
                Some(s) if s.transform().is_some() => {}
                _ => {
                    return Err(EkiError::InvalidArgument(format!(
                        "segment '{name}' references '{r}', which is not an earlier scalar"
                    )))
                }
            }
        }
        if transform.references().is_empty() {
            transform.fixed()?;
        }
        self.push(name, role, 1)
    }

    pub fn push_block(&mut self, name: &str, role: SegmentRole, len: usize) -> Result<()> {
        if let SegmentRole::FieldNoise { nx, nz } = role {
            if nx * nz != len {
                return Err(EkiError::Dimension(format!(
                    "field block '{name}' of {len} entries for a {nx}x{nz} grid"
                )));
            }
        }
        if matches!(role, SegmentRole::Hyper { .. } | SegmentRole::Scalar { .. }) {
            return Err(EkiError::InvalidArgument(
                "use push_scalar for transformed segments".into(),
            ));
        }
        self.push(name, role, len)
    }

    fn push(&mut self, name: &str, role: SegmentRole, len: usize) -> Result<()> {
        if self.segment(name).is_some() {
            return Err(EkiError::InvalidArgument(format!("duplicate segment '{name}'")));
        }
        let offset = self.dim();
        self.segments.push(Segment {
            name: name.to_string(),
            role,
            offset,
            len,
        });
        Ok(())
    }

    pub fn slice<'a>(&self, theta: &'a [f64], name: &str) -> Result<&'a [f64]> {
        let seg = self
            .segment(name)
            .ok_or_else(|| EkiError::InvalidArgument(format!("no segment '{name}'")))?;
        Ok(&theta[seg.range()])
    }

    /// Transformed values of every scalar segment, in layout order.
    pub fn transformed_scalars(&self, theta: &[f64]) -> Result<BTreeMap<String, f64>> {
        if theta.len() != self.dim() {
            return Err(EkiError::Dimension(format!(
                "parameter vector has {} entries, layout {}",
                theta.len(),
                self.dim()
            )));
        }
        let mut out = BTreeMap::new();
        for seg in &self.segments {
            if let Some(t) = seg.transform() {
                let target = t.resolve(&|n| out.get(n).copied())?;
                out.insert(seg.name.clone(), transform_scalar(theta[seg.offset], &target)?);
            }
        }
        Ok(out)
    }
}
