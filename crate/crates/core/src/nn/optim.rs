use super::Parameter;

/// Plain SGD: `value -= lr * grad` on updatable parameters, then every grad
/// buffer is cleared.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, lr: f64) {
    for p in params {
        if p.is_updatable() {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= lr * g;
            }
        }
        p.zero_grad();
    }
}
