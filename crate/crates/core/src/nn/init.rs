use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Layer, LayerSpec, NnError, Scalar, Sequential};

/// He-uniform weights in `±√(6 / fan_in)` and zero biases, drawn from `rng`
/// in layer order.
pub fn init_he_uniform<T: Scalar, R: Rng>(layer: &mut Layer<T>, rng: &mut R) {
    let Some((_, _, fan_in)) = layer.spec().param_shapes() else {
        return;
    };
    let bound = (6.0 / fan_in as f64).sqrt();
    if let Some(w) = layer.weights_mut() {
        for v in w.data_mut() {
            let u: f64 = rng.random();
            *v = T::from_f64_lossy((2.0 * u - 1.0) * bound);
        }
        w.clear_grad();
    }
    if let Some(b) = layer.bias_mut() {
        b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        b.clear_grad();
    }
}

/// A freshly initialized stack; identical seeds give identical parameters.
pub fn init_parameters<T: Scalar>(
    specs: &[LayerSpec],
    seed: u64,
) -> Result<Sequential<T>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Sequential::new(specs)?;
    for layer in seq.layers_mut() {
        init_he_uniform(layer, &mut rng);
    }
    Ok(seq)
}
