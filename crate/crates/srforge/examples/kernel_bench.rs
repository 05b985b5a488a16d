// Isolated throughput check for the inner conv kernels, no threading or setup.
use std::time::Instant;

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
fn main() {
    use std::arch::x86_64::*;
    let icg = 64usize;
    let (oh, ow) = (41usize, 41usize);
    let pw = ow + 2;
    let per_c = (oh + 2) * pw;
    let pin: Vec<f64> = (0..icg * per_c).map(|i| (i % 97) as f64 * 0.01).collect();
    let w: Vec<f64> = (0..icg * 9).map(|i| (i % 13) as f64 * 0.05).collect();
    let mut ra = vec![0.0f64; ow];
    let mut rb = vec![0.0f64; ow];

    // direct two-row kernel, as shipped
    let iters = 2000;
    let t = Instant::now();
    for it in 0..iters {
        let oy = (it % 20) * 2;
        unsafe { srforge::tensor::bench_conv3x3_rows2(&mut ra, &mut rb, 0.1, &pin, per_c, pw, icg, oy, &w) };
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = (iters * 2 * ow * icg * 9 * 2) as f64;
    println!("rows2 kernel: {:.1} GF/s single-thread", flops / dt / 1e9);

    // plain unmasked zmm variant for comparison
    let t = Instant::now();
    for it in 0..iters {
        let oy = (it % 20) * 2;
        unsafe {
            let mut a0 = _mm512_set1_pd(0.1);
            let mut a1 = a0;
            let mut b0 = a0;
            let mut b1 = a0;
            for i in 0..icg {
                let plane = pin.as_ptr().add(i * per_c);
                let wt = w.as_ptr().add(i * 9);
                for ky in 0..3 {
                    let row0 = plane.add((oy + ky) * pw);
                    let row1 = row0.add(pw);
                    for kx in 0..3 {
                        let wv = _mm512_set1_pd(*wt.add(ky * 3 + kx));
                        a0 = _mm512_fmadd_pd(_mm512_loadu_pd(row0.add(kx)), wv, a0);
                        b0 = _mm512_fmadd_pd(_mm512_loadu_pd(row1.add(kx)), wv, b0);
                        a1 = _mm512_fmadd_pd(_mm512_loadu_pd(row0.add(kx + 8)), wv, a1);
                        b1 = _mm512_fmadd_pd(_mm512_loadu_pd(row1.add(kx + 8)), wv, b1);
                    }
                }
            }
            _mm512_storeu_pd(ra.as_mut_ptr(), a0);
            _mm512_storeu_pd(ra.as_mut_ptr().add(8), a1);
            _mm512_storeu_pd(rb.as_mut_ptr(), b0);
            _mm512_storeu_pd(rb.as_mut_ptr().add(8), b1);
        }
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = (iters * 2 * 16 * icg * 9 * 2) as f64;
    println!("unmasked 16-lane 2-row loop: {:.1} GF/s single-thread", flops / dt / 1e9);
    std::hint::black_box((&ra, &rb));
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
fn main() {
    println!("avx512f not enabled");
}
