use super::{NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!(
                "invalid Adam configuration {self:?}"
            )))
        }
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments mirroring `sizes` (element count per parameter).
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Result<Self, NnError> {
        config.validate()?;
        Ok(AdamState {
            config,
            step_count: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    /// Restores persisted moments.
    pub fn from_parts(
        config: AdamConfig,
        step_count: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Result<Self, NnError> {
        config.validate()?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::ShapeMismatch(
                "first and second moments differ".into(),
            ));
        }
        Ok(AdamState {
            config,
            step_count,
            m,
            v,
        })
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One bias-corrected update of every parameter from its gradient slot.
    /// A parameter without a gradient is treated as having zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((i, p)) = params
            .iter()
            .enumerate()
            .find(|(i, p)| p.len() != self.m[*i].len())
        {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {i} has {} elements, moments have {}",
                p.len(),
                self.m[i].len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count;
        for (i, p) in params.iter_mut().enumerate() {
            let grad = match p.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.len()],
            };
            adam_update(
                p.data_mut(),
                &grad,
                &mut self.m[i],
                &mut self.v[i],
                t,
                &self.config,
            );
        }
        Ok(())
    }
}

/// In-place Adam update of one parameter slice at step `t` (1-based).
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    config: &AdamConfig,
) {
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let one = T::one();
    let exponent = t.min(i32::MAX as u64) as i32;
    let bc1 = T::from_f64_lossy(1.0 - config.beta1.powi(exponent));
    let bc2 = T::from_f64_lossy(1.0 - config.beta2.powi(exponent));
    let lr = T::from_f64_lossy(config.lr);
    let eps = T::from_f64_lossy(config.epsilon);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
