pub mod eval;
pub mod gradcheck;
pub mod hog;
pub mod infer;
pub mod synth;
pub mod train;

/// A command that ran to completion but whose outcome is a failure.
#[derive(Debug)]
pub struct Failed(pub i32);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "failed (exit {})", self.0)
    }
}

impl std::error::Error for Failed {}
