use rand::Rng;

use crate::autodiff::Tensor;

/// Xavier/Glorot uniform initialization: values drawn uniformly from
/// [−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))].
pub fn xavier_init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    assert!(fan_in >= 1 && fan_out >= 1, "xavier needs positive fan sizes");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen::<f64>() * 2.0 * bound - bound)
        .collect();
    Tensor::from_vec(&[fan_in, fan_out], data)
}
