use crate::autodiff::Tensor;

/// Millimeters per network coordinate unit.
pub const COORD_SCALE_MM: f64 = 100.0;
/// Palm joint: the wrist of the first hand.
pub const PALM_INDEX: usize = 0;

/// Translates `pose` (`K x 3`) and every `n x 3` tensor in `others` so that
/// `pose[palm]` becomes the origin. Returns the translated copies and the
/// subtracted offset.
pub fn palm_normalize(pose: &Tensor<f64>, others: &[Tensor<f64>], palm: usize) -> (Tensor<f64>, Vec<Tensor<f64>>, [f64; 3]) {
    let r = pose.row(palm);
    let offset = [r[0], r[1], r[2]];
    let shift = |t: &Tensor<f64>| {
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(3) {
            for k in 0..3 {
                row[k] -= offset[k];
            }
        }
        out
    };
    (shift(pose), others.iter().map(shift).collect(), offset)
}

/// Millimeters to network units.
pub fn to_network_units(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|x| x / COORD_SCALE_MM)
}

/// Network units to millimeters.
pub fn to_millimeters(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|x| x * COORD_SCALE_MM)
}
