use super::Real;

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky<T: Real>(x: T, slope: T) -> T {
    if x >= T::ZERO {
        x
    } else {
        slope * x
    }
}

/// Elementwise `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu<T: Real>(x: &[T], slope: T) -> Vec<T> {
    x.iter().map(|&v| leaky(v, slope)).collect()
}

/// Backward of [`leaky_relu`] given the pre-activation, in place on `grad`.
pub fn leaky_relu_backward<T: Real>(pre: &[T], grad: &mut [T], slope: T) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p < T::ZERO {
            *g *= slope;
        }
    }
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu_backward(post: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(post) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
