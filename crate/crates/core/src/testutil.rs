use crate::spectral::gaussian_matrix;
use crate::store::WeightMatrix;

pub(crate) fn gaussian(rows: usize, cols: usize, seed: u64) -> WeightMatrix {
    gaussian_matrix("g", rows, cols, 1.0, seed).unwrap()
}
