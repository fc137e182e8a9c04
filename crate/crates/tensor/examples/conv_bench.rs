//! Rough conv throughput probe: prints GFLOP/s for shapes typical of the
//! encoder stems and decoder stages.

use std::time::Instant;

use polypseg_tensor::{ops::conv, ConvCfg, InitRng, Tensor};

fn bench(name: &str, x: &Tensor<f32>, w: &Tensor<f32>, cfg: &ConvCfg, reps: usize) {
    let _ = conv::conv2d_fwd(x, w, None, cfg); // warmup
    let t0 = Instant::now();
    for _ in 0..reps {
        let y = conv::conv2d_fwd(x, w, None, cfg);
        std::hint::black_box(y);
    }
    let secs = t0.elapsed().as_secs_f64();
    let [n, _, h, wd] = x.shape();
    let (ho, wo) = cfg.out_hw(h, wd);
    let [cout, cin_g, kh, kw] = w.shape();
    let flops = 2.0 * (n * cout * ho * wo * cin_g * kh * kw * reps) as f64;
    println!("{name}: {:.1} GFLOP/s ({:.3} s / {reps} reps)", flops / secs / 1e9, secs);
}

fn main() {
    let mut rng = InitRng::new(0);
    let x1: Tensor<f32> = rng.uniform([2, 64, 256, 256], -1.0, 1.0);
    let w1: Tensor<f32> = rng.uniform([64, 64, 3, 3], -0.1, 0.1);
    bench("3x3 64->64 @256^2 x2", &x1, &w1, &ConvCfg::same(3), 5);

    let x2: Tensor<f32> = rng.uniform([2, 3, 512, 512], -1.0, 1.0);
    let w2: Tensor<f32> = rng.uniform([64, 3, 7, 7], -0.1, 0.1);
    bench("7x7 stem 3->64 s2 @512^2 x2", &x2, &w2, &ConvCfg { kh: 7, kw: 7, stride: 2, ph: 3, pw: 3, groups: 1 }, 5);

    let x3: Tensor<f32> = rng.uniform([2, 256, 64, 64], -1.0, 1.0);
    let w3: Tensor<f32> = rng.uniform([512, 256, 1, 1], -0.1, 0.1);
    bench("1x1 256->512 @64^2 x2", &x3, &w3, &ConvCfg::same(1), 20);

    let x4: Tensor<f32> = rng.uniform([2, 128, 128, 128], -1.0, 1.0);
    let w4: Tensor<f32> = rng.uniform([128, 4, 3, 3], -0.1, 0.1);
    bench("grouped 3x3 g=32 @128^2 x2", &x4, &w4, &ConvCfg::same(3).with_groups(32), 5);
}
