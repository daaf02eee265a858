//! Adam optimizer over the flat parameter list.

use crate::model::Parameter;
use crate::tape::Matrix;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub struct Adam {
    lr: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, params: &[&Parameter]) -> Self {
        Self {
            lr,
            m: params.iter().map(|p| Matrix::zeros(p.value.dim())).collect(),
            v: params.iter().map(|p| Matrix::zeros(p.value.dim())).collect(),
            t: 0,
        }
    }

    /// One update from the gradients currently accumulated in `params`.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (pi, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for ((x, g), (m, v)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_scalar_reference_for_ten_steps() {
        // minimize f(x) = x^2 from x = 1.3; gradient 2x
        let mut p = Parameter {
            name: "x".into(),
            value: Matrix::from_elem((1, 1), 1.3),
            grad: Matrix::zeros((1, 1)),
        };
        let mut adam = Adam::new(0.05, &[&p]);

        // independent scalar implementation
        let (mut xr, mut mr, mut vr) = (1.3f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * xr;
            mr = BETA1 * mr + (1.0 - BETA1) * g;
            vr = BETA2 * vr + (1.0 - BETA2) * g * g;
            let m_hat = mr / (1.0 - BETA1.powi(t));
            let v_hat = vr / (1.0 - BETA2.powi(t));
            xr -= 0.05 * m_hat / (v_hat.sqrt() + EPS);

            p.grad[(0, 0)] = 2.0 * p.value[(0, 0)];
            adam.step(&mut [&mut p]);
            assert_eq!(p.value[(0, 0)], xr, "step {t} diverged from reference");
        }
        assert!(p.value[(0, 0)] < 1.3);
    }

    #[test]
    fn descends_on_quadratic() {
        let mut p = Parameter {
            name: "x".into(),
            value: Matrix::from_elem((2, 2), 2.0),
            grad: Matrix::zeros((2, 2)),
        };
        let mut adam = Adam::new(0.1, &[&p]);
        for _ in 0..200 {
            p.grad.assign(&(&p.value * 2.0));
            adam.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|&x| x.abs() < 0.1));
    }
}
