use ndarray::{ArrayViewD, ArrayViewMutD, Zip};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with fixed moment decays. Moment buffers are allocated on the first
/// update; every later update must present the same tensors in the same order.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

/// A parameter tensor, its gradient and its learning rate.
pub struct Slot<'a> {
    pub param: ArrayViewMutD<'a, f32>,
    pub grad: ArrayViewD<'a, f32>,
    pub lr: f64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, slots: Vec<Slot<'_>>) {
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.param.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(slots.len(), self.first.len(), "optimizer slots changed between steps");
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for (i, mut slot) in slots.into_iter().enumerate() {
            if slot.lr == 0.0 {
                continue;
            }
            let step_size = (slot.lr * c2.sqrt() / c1) as f32;
            let eps = (EPSILON * c2.sqrt()) as f32;
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let mut j = 0;
            Zip::from(&mut slot.param).and(&slot.grad).for_each(|p, &g| {
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                *p -= step_size * m[j] / (v[j].sqrt() + eps);
                j += 1;
            });
        }
    }
}
