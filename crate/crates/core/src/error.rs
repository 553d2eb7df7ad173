use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not.
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A scalar or structural argument is outside its valid range.
    InvalidArgument { op: &'static str, reason: String },
    /// NaN or infinity appeared where finite values are required.
    NonFinite { op: &'static str },
    /// `backward` was called on a non-scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// The loss does not depend on anything that requires a gradient.
    DetachedGraph,
    /// An optimizer step found a parameter without a gradient.
    MissingGrad { name: String },
    /// Unknown parameter name.
    UnknownParameter { name: String },
    /// Task set not allowed for the domain, or unknown task tag.
    InvalidTasks { reason: String },
    /// Joint configuration is not a tree.
    CyclicSkeleton { joint: usize },
    /// Point at or behind the camera plane.
    BehindCamera { joint: usize, z: f64 },
    /// No joint of the subject lands inside the image.
    OutOfFrame,
    /// Procrustes alignment on a degenerate point set.
    AlignmentFailed,
    /// A metric was requested on an empty batch or degenerate labels.
    EmptyInput { op: &'static str },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn arg(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { op, reason: reason.into() }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalarLoss { .. } => "non_scalar_loss",
            Error::DetachedGraph => "detached_graph",
            Error::MissingGrad { .. } => "missing_grad",
            Error::UnknownParameter { .. } => "unknown_parameter",
            Error::InvalidTasks { .. } => "invalid_tasks",
            Error::CyclicSkeleton { .. } => "cyclic_skeleton",
            Error::BehindCamera { .. } => "behind_camera",
            Error::OutOfFrame => "out_of_frame",
            Error::AlignmentFailed => "alignment_failed",
            Error::EmptyInput { .. } => "empty_input",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, expected, got } => {
                write!(f, "{op}: dimension mismatch, expected {expected:?}, got {got:?}")
            }
            Error::InvalidArgument { op, reason } => write!(f, "{op}: {reason}"),
            Error::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::DetachedGraph => {
                write!(f, "loss is not connected to any tensor that requires a gradient")
            }
            Error::MissingGrad { name } => write!(f, "parameter {name} has no gradient"),
            Error::UnknownParameter { name } => write!(f, "unknown parameter {name}"),
            Error::InvalidTasks { reason } => write!(f, "invalid task set: {reason}"),
            Error::CyclicSkeleton { joint } => {
                write!(f, "joint tree contains a cycle through joint {joint}")
            }
            Error::BehindCamera { joint, z } => {
                write!(f, "joint {joint} is behind the camera (z = {z})")
            }
            Error::OutOfFrame => write!(
                f,
                "subject is entirely outside the image; move the camera or widen its field of view"
            ),
            Error::AlignmentFailed => {
                write!(f, "procrustes alignment failed: degenerate (collinear) configuration")
            }
            Error::EmptyInput { op } => write!(f, "{op}: empty or degenerate input"),
        }
    }
}

impl core::error::Error for Error {}
