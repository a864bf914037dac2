//! SGD with momentum, L2 weight decay and a poly learning-rate schedule.

/// `lr0 · (1 - t / total)^power`, clamped to zero past the end.
pub fn poly_lr(lr0: f64, t: usize, total: usize, power: f64) -> f64 {
    if total == 0 || t >= total {
        return 0.0;
    }
    lr0 * (1.0 - t as f64 / total as f64).powf(power)
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub total: usize,
    t: usize,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr0: f64, momentum: f64, weight_decay: f64, power: f64, total: usize, n_params: usize) -> Self {
        Self {
            lr0,
            momentum,
            weight_decay,
            power,
            total,
            t: 0,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn lr(&self) -> f64 {
        poly_lr(self.lr0, self.t, self.total, self.power)
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    /// `v ← μ v + (g + λ w)`, `w ← w − lr · v`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.lr();
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *w;
            *w -= lr * *v;
        }
        self.t += 1;
    }
}
