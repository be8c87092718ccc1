#![allow(dead_code)]

use afh_core::autodiff::Scalar;
use afh_core::image::Image;
use afh_core::nets::{init_params, ConvLayer, EnhancerConfig, ParamSet, PolicyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small networks on `h x w x c` images with `ph x pw` patches.
pub fn tiny_configs(h: usize, w: usize, c: usize, ph: usize, pw: usize) -> (PolicyConfig, EnhancerConfig) {
    let mut p = PolicyConfig::new(h, w, c);
    p.encoder_width = 8;
    p.lstm_hidden = 6;
    let mut e = EnhancerConfig::new(h, w, c, ph, pw);
    e.global_fc_width = 6;
    e.conv_spec = vec![ConvLayer::new(4, 3), ConvLayer::new(c, 3)];
    (p, e)
}

pub fn tiny_params<T: Scalar>(h: usize, w: usize, c: usize, ph: usize, pw: usize, seed: u64) -> ParamSet<T> {
    let (p, e) = tiny_configs(h, w, c, ph, pw);
    init_params(&p, &e, seed).unwrap()
}

/// Overwrites every parameter with uniform noise in `[-scale, scale)`.
pub fn randomize<T: Scalar>(params: &mut ParamSet<T>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in params.policy.entries_mut().iter_mut().chain(params.enhancer.entries_mut()) {
        for v in e.tensor.data_mut() {
            *v = T::from_f64(rng.gen_range(-scale..scale));
        }
    }
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(h, w, c, |_, _, _| rng.gen::<f64>())
}
