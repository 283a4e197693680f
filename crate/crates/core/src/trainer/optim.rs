/// Adam with decoupled weight decay.
///
/// Parameters are passed as groups; each group carries its own moment buffers
/// and a flag selecting whether weight decay applies to it.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

pub struct ParamGroup<'a> {
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
    pub decay: bool,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) {
        if self.first.is_empty() {
            self.first = groups.iter().map(|g| vec![0.0; g.params.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(
            self.first.len(),
            groups.len(),
            "parameter groups changed between steps"
        );

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;

        for (gi, group) in groups.iter_mut().enumerate() {
            assert_eq!(group.params.len(), group.grads.len());
            let m = &mut self.first[gi];
            let v = &mut self.second[gi];
            for i in 0..group.params.len() {
                let g = group.grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let p = &mut group.params[i];
                if group.decay {
                    *p *= decay;
                }
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
