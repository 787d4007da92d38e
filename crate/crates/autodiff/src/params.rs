use crate::tensor::Tensor;

/// Anything that owns named trainable tensors.
///
/// `visit` and `visit_mut` must walk parameters in the same fixed order;
/// optimizer state and gradient lists are aligned to that order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t.shape().to_vec()));
        out
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

/// Strips the leading separator left by an empty prefix.
pub fn param_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
