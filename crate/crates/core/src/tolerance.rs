/// Numerical tolerances shared by validation and repair code.
///
/// Defaults sit a few decades above the double-precision noise floor of the
/// eigensolver for the small dimensions this crate targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSet {
    pub hermiticity: f64,
    pub trace: f64,
    pub psd: f64,
    pub matrix: f64,
    /// Relative to `max(1, max |E_r|)`.
    pub reconstruction: f64,
    /// Relative to `max(1, max |E|)`. Eigenvalues closer than this are one level.
    pub degeneracy: f64,
    pub luders_floor: f64,
    /// Floor for the post-step PSD clamp. The effective clamp tolerance of a
    /// step also scales with the size of its Ito correction, see
    /// [`crate::dynamics::clamp_tolerance`].
    pub clamp: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            trace: 1e-10,
            psd: 1e-9,
            matrix: 1e-9,
            reconstruction: 1e-8,
            degeneracy: 1e-8,
            luders_floor: 1e-12,
            clamp: 1e-6,
        }
    }
}
