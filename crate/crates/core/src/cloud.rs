//! Columnar Gaussian point cloud and validation.
//!
//! Scales and opacities are stored pre-activation (raw reals / logits);
//! colors are stored as logits and map to [0,1] through a sigmoid at render
//! time. Rotations are raw quaternions normalized at render time. A cloud is
//! an immutable snapshot between epochs: mutation happens by constructing a
//! new one.

use crate::rotation::Quat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    Initialized,
    Canonical,
    Deformed,
}

impl std::fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpaceTag::Initialized => write!(f, "initialized"),
            SpaceTag::Canonical => write!(f, "canonical"),
            SpaceTag::Deformed => write!(f, "deformed"),
        }
    }
}

/// Structure-of-arrays Gaussian cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    /// N*3 world-space means.
    pub means: Vec<f64>,
    /// N*4 quaternions (w,x,y,z), stored raw; normalized at render time.
    pub rotations: Vec<f64>,
    /// N*3 raw scale values; activated scale = exp(raw) + rendering radius.
    pub scales: Vec<f64>,
    /// N opacity logits; activated through sigmoid.
    pub opacities: Vec<f64>,
    /// N*3 color logits; activated through sigmoid.
    pub colors: Vec<f64>,
    pub space_tag: SpaceTag,
}

impl GaussianCloud {
    pub fn with_capacity(n: usize, space_tag: SpaceTag) -> Self {
        Self {
            means: Vec::with_capacity(n * 3),
            rotations: Vec::with_capacity(n * 4),
            scales: Vec::with_capacity(n * 3),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n * 3),
            space_tag,
        }
    }

    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn mean(&self, i: usize) -> [f64; 3] {
        [self.means[3 * i], self.means[3 * i + 1], self.means[3 * i + 2]]
    }

    pub fn rotation(&self, i: usize) -> Quat {
        [
            self.rotations[4 * i],
            self.rotations[4 * i + 1],
            self.rotations[4 * i + 2],
            self.rotations[4 * i + 3],
        ]
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        [self.scales[3 * i], self.scales[3 * i + 1], self.scales[3 * i + 2]]
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        [self.colors[3 * i], self.colors[3 * i + 1], self.colors[3 * i + 2]]
    }

    pub fn push(&mut self, mean: [f64; 3], rot: Quat, scale: [f64; 3], opacity: f64, color: [f64; 3]) {
        self.means.extend_from_slice(&mean);
        self.rotations.extend_from_slice(&rot);
        self.scales.extend_from_slice(&scale);
        self.opacities.push(opacity);
        self.colors.extend_from_slice(&color);
    }
}

/// A single invariant violation found by `validate_cloud`.
#[derive(Debug, Clone, PartialEq)]
pub enum CloudViolation {
    /// Column lengths disagree; holds (column name, elements, expected points).
    ColumnMismatch { column: &'static str, len: usize, expected_points: usize },
    NonFiniteValue { field: &'static str, index: usize },
    ZeroNormRotation { index: usize },
}

impl std::fmt::Display for CloudViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CloudViolation::ColumnMismatch { column, len, expected_points } => write!(
                f,
                "column {column} has {len} elements, inconsistent with {expected_points} points"
            ),
            CloudViolation::NonFiniteValue { field, index } => {
                write!(f, "non-finite {field} at point {index}")
            }
            CloudViolation::ZeroNormRotation { index } => {
                write!(f, "zero-norm rotation at point {index}")
            }
        }
    }
}

/// Validation report; empty iff the cloud satisfies all invariants.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<CloudViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks structural and numeric invariants, reporting every violation with
/// the offending point index instead of failing on the first.
pub fn validate_cloud(cloud: &GaussianCloud) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = cloud.len();
    let columns: [(&'static str, usize, usize); 4] = [
        ("means", cloud.means.len(), 3),
        ("rotations", cloud.rotations.len(), 4),
        ("scales", cloud.scales.len(), 3),
        ("colors", cloud.colors.len(), 3),
    ];
    let mut structural = false;
    for (column, len, width) in columns {
        if len != n * width {
            report.violations.push(CloudViolation::ColumnMismatch {
                column,
                len,
                expected_points: n,
            });
            structural = true;
        }
    }
    if structural {
        return report;
    }
    for i in 0..n {
        if cloud.mean(i).iter().any(|v| !v.is_finite()) {
            report
                .violations
                .push(CloudViolation::NonFiniteValue { field: "means", index: i });
        }
        let q = cloud.rotation(i);
        if q.iter().any(|v| !v.is_finite()) {
            report
                .violations
                .push(CloudViolation::NonFiniteValue { field: "rotations", index: i });
        } else if q.iter().map(|c| c * c).sum::<f64>() == 0.0 {
            report.violations.push(CloudViolation::ZeroNormRotation { index: i });
        }
        if cloud.scale(i).iter().any(|v| !v.is_finite()) {
            report
                .violations
                .push(CloudViolation::NonFiniteValue { field: "scales", index: i });
        }
        if !cloud.opacities[i].is_finite() {
            report
                .violations
                .push(CloudViolation::NonFiniteValue { field: "opacities", index: i });
        }
        if cloud.color(i).iter().any(|v| !v.is_finite()) {
            report
                .violations
                .push(CloudViolation::NonFiniteValue { field: "colors", index: i });
        }
    }
    report
}
