use crate::tensor::Tensor;

/// Joins a parameter prefix and a field name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A bundle of named trainable tensors.
///
/// Gradients share the type of the parameters they belong to, so every
/// bundle doubles as its own gradient container.
pub trait Parameters: Clone {
    /// Visits every tensor in a fixed order with its fully qualified name.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));

    /// Same order as [`Parameters::visit`].
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t)));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.data_mut().fill(0.0));
        z
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        let mut theirs = Vec::new();
        other.visit("", &mut |_, t| theirs.push(t));
        let mut i = 0;
        self.visit_mut("", &mut |_, t| {
            t.accumulate(theirs[i]);
            i += 1;
        });
    }

    fn scale_all(&mut self, s: f64) {
        self.visit_mut("", &mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
            t.settle();
        });
    }

    /// Euclidean norm over every scalar in the bundle.
    fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit("", &mut |_, t| {
            sq += t.data().iter().map(|v| v * v).sum::<f64>()
        });
        sq.sqrt()
    }

    fn all_zero(&self) -> bool {
        let mut zero = true;
        self.visit("", &mut |_, t| zero &= t.data().iter().all(|&v| v == 0.0));
        zero
    }
}
