use ndarray::{ArrayD, Zip};

use super::param::Parameter;

/// Adam with bias-corrected first and second moment estimates.
///
/// One instance owns one parameter group; per-group learning rates are
/// separate instances. `lr` is public so schedules can adjust it per step.
pub struct Adam {
    params: Vec<Parameter>,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: Vec<Parameter>, lr: f64) -> Self {
        let m = params
            .iter()
            .map(|p| ArrayD::zeros(ndarray::IxDyn(&p.shape())))
            .collect();
        let v = params
            .iter()
            .map(|p| ArrayD::zeros(ndarray::IxDyn(&p.shape())))
            .collect();
        Adam {
            params,
            m,
            v,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the currently accumulated gradients. Gradients are
    /// left untouched; the caller zeroes them.
    pub fn step(&mut self) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let Adam { params, m, v, .. } = self;
        for (i, p) in params.iter().enumerate() {
            let m_i = &mut m[i];
            let v_i = &mut v[i];
            p.apply_update(|value, grad| {
                Zip::from(&mut *m_i)
                    .and(grad)
                    .for_each(|mi, &gi| *mi = b1 * *mi + (1.0 - b1) * gi);
                Zip::from(&mut *v_i)
                    .and(grad)
                    .for_each(|vi, &gi| *vi = b2 * *vi + (1.0 - b2) * gi * gi);
                Zip::from(value)
                    .and(&*m_i)
                    .and(&*v_i)
                    .for_each(|x, &mi, &vi| {
                        *x -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                    });
            });
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Moment buffers and step counter as named arrays for checkpointing.
    pub fn state_entries(&self, prefix: &str) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::with_capacity(2 * self.params.len() + 1);
        out.push((
            format!("{prefix}.step"),
            ArrayD::from_elem(ndarray::IxDyn(&[]), self.step as f64),
        ));
        for (i, p) in self.params.iter().enumerate() {
            out.push((format!("{prefix}.m.{}", p.name()), self.m[i].clone()));
            out.push((format!("{prefix}.v.{}", p.name()), self.v[i].clone()));
        }
        out
    }

    /// Restore moments and step counter saved by [`Adam::state_entries`].
    /// Entries not found are left at their current values.
    pub fn load_state_entries(&mut self, prefix: &str, entries: &[(String, ArrayD<f64>)]) {
        let lookup = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, a)| a);
        if let Some(step) = lookup(&format!("{prefix}.step")) {
            self.step = step.iter().next().copied().unwrap_or(0.0) as u64;
        }
        for (i, p) in self.params.iter().enumerate() {
            if let Some(m) = lookup(&format!("{prefix}.m.{}", p.name())) {
                self.m[i] = m.clone();
            }
            if let Some(v) = lookup(&format!("{prefix}.v.{}", p.name())) {
                self.v[i] = v.clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Parameter, Tape};
    use ndarray::arr1;

    #[test]
    fn first_step_moves_by_lr_against_constant_gradient() {
        let p = Parameter::new("x", arr1(&[1.0]).into_dyn());
        let mut opt = Adam::new(vec![p.clone()], 0.1);
        let tape = Tape::new();
        let x = tape.param(&p);
        tape.backward(&x.sum()).unwrap(); // gradient = 1.0
        opt.step();
        let moved = 1.0 - p.value()[0];
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((moved - 0.1).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let p = Parameter::new("x", arr1(&[1.5]).into_dyn());
        let mut opt = Adam::new(vec![p.clone()], 0.1);
        opt.step();
        assert_eq!(p.value()[0], 1.5);
    }

    #[test]
    fn gradients_untouched_by_step() {
        let p = Parameter::new("x", arr1(&[1.0]).into_dyn());
        let mut opt = Adam::new(vec![p.clone()], 0.1);
        let tape = Tape::new();
        let x = tape.param(&p);
        tape.backward(&x.sum()).unwrap();
        opt.step();
        assert_eq!(p.grad().as_slice().unwrap(), &[1.0]);
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let p = Parameter::new("x", arr1(&[0.0]).into_dyn());
        let mut opt = Adam::new(vec![p.clone()], 0.05);
        for _ in 0..500 {
            p.zero_grad();
            let tape = Tape::new();
            let x = tape.param(&p);
            let loss = x.add_scalar(-4.0).square().sum();
            tape.backward(&loss).unwrap();
            opt.step();
        }
        assert!((p.value()[0] - 4.0).abs() < 1e-2, "x = {}", p.value()[0]);
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let run = |resume_at: Option<usize>| {
            let p = Parameter::new("x", arr1(&[0.0]).into_dyn());
            let mut opt = Adam::new(vec![p.clone()], 0.05);
            let mut saved: Option<(Vec<(String, ArrayD<f64>)>, ArrayD<f64>)> = None;
            for s in 0..40 {
                if resume_at == Some(s) {
                    let (entries, value) = saved.take().unwrap();
                    p.set_value(value);
                    opt = Adam::new(vec![p.clone()], 0.05);
                    opt.load_state_entries("opt", &entries);
                }
                p.zero_grad();
                let tape = Tape::new();
                let x = tape.param(&p);
                let loss = x.add_scalar(-4.0).square().sum();
                tape.backward(&loss).unwrap();
                opt.step();
                if resume_at == Some(s + 1) {
                    saved = Some((opt.state_entries("opt"), p.value()));
                }
            }
            p.value()[0]
        };
        let uninterrupted = run(None);
        let resumed = run(Some(20));
        assert_eq!(uninterrupted.to_bits(), resumed.to_bits());
    }
}
