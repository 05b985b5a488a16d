// Rough throughput check for the convolution kernels on training-shaped work.
use srforge::tensor::{conv2d_backward, conv2d_forward, ConvSpec, Shape, Tensor};
use std::time::Instant;

fn randomish(shape: Shape) -> Tensor<f32> {
    let mut state = 0x243f6a8885a308d3u64;
    let data = (0..shape.len())
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn bench(name: &str, in_c: usize, out_c: usize, groups: usize, batch: usize, hw: usize, iters: usize) {
    let spec = ConvSpec::new(in_c, out_c, 3).with_groups(groups);
    let input = randomish(Shape::new(batch, in_c, hw, hw));
    let weight = randomish(spec.weight_shape());
    let out = conv2d_forward(&input, &weight, None, &spec).unwrap();
    let macs = (in_c / groups) * out_c * 9 * batch * hw * hw;

    let t = Instant::now();
    for _ in 0..iters {
        let _ = conv2d_forward(&input, &weight, None, &spec).unwrap();
    }
    let dt = t.elapsed().as_secs_f64() / iters as f64;
    let fwd_gflops = 2.0 * macs as f64 / dt / 1e9;

    let t = Instant::now();
    for _ in 0..iters {
        let _ = conv2d_backward(&out, &input, &weight, false, &spec).unwrap();
    }
    let bt = t.elapsed().as_secs_f64() / iters as f64;
    let bwd_gflops = 4.0 * macs as f64 / bt / 1e9;

    println!(
        "{name:26} fwd {:7.2} ms ({fwd_gflops:6.1} GF/s)   bwd {:7.2} ms ({bwd_gflops:6.1} GF/s)",
        dt * 1e3,
        bt * 1e3
    );
}

fn main() {
    println!("threads: {}", rayon::current_num_threads());
    bench("64->128 dense 41x41 b32", 64, 128, 1, 32, 41, 5);
    bench("128->128 g32 41x41 b32", 128, 128, 32, 32, 41, 5);
    bench("128->64 dense 41x41 b32", 128, 64, 1, 32, 41, 5);
    bench("1->64 dense 41x41 b32", 1, 64, 1, 32, 41, 5);
    bench("64->128 dense 256x256 b1", 64, 128, 1, 1, 256, 3);
}
