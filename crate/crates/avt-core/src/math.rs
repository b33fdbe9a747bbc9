//! Thin wrappers over `libm` so the rest of the crate stays `no_std`.

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn sqrt32(x: f32) -> f32 {
    libm::sqrtf(x)
}

pub fn exp32(x: f32) -> f32 {
    libm::expf(x)
}

pub fn ln32(x: f32) -> f32 {
    libm::logf(x)
}

pub fn sin32(x: f32) -> f32 {
    libm::sinf(x)
}

pub fn cos32(x: f32) -> f32 {
    libm::cosf(x)
}
