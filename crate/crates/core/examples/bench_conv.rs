use gnwm::tensor::Tape;
use std::time::Instant;

fn time_it<F: FnMut()>(name: &str, reps: usize, mut f: F) {
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name}: {:.1} ms", start.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    let b = 64;
    // conv2: 16->16 k3 @32x32 (the dominant layer)
    let x: Vec<f64> = (0..b * 16 * 32 * 32).map(|i| (i % 97) as f64 / 97.0).collect();
    let k: Vec<f64> = (0..16 * 16 * 9).map(|i| (i % 53) as f64 / 53.0 - 0.5).collect();
    time_it("conv2 16->16 fwd", 5, || {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), vec![b, 16, 32, 32], false).unwrap();
        let kv = t.leaf(k.clone(), vec![16, 16, 3, 3], false).unwrap();
        let _ = t.conv2d_same(xv, kv, None).unwrap();
    });
    time_it("conv2 fwd+bwd", 5, || {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone(), vec![b, 16, 32, 32], true).unwrap();
        let kv = t.leaf(k.clone(), vec![16, 16, 3, 3], true).unwrap();
        let y = t.conv2d_same(xv, kv, None).unwrap();
        let l = t.sum_all(y);
        t.backward(l).unwrap();
    });
    // conv1: 3->16 k5
    let x1: Vec<f64> = (0..b * 3 * 32 * 32).map(|i| (i % 97) as f64 / 97.0).collect();
    let k1: Vec<f64> = (0..16 * 3 * 25).map(|i| (i % 53) as f64 / 53.0 - 0.5).collect();
    time_it("conv1 3->16 k5 fwd+bwd", 5, || {
        let mut t = Tape::new();
        let xv = t.leaf(x1.clone(), vec![b, 3, 32, 32], true).unwrap();
        let kv = t.leaf(k1.clone(), vec![16, 3, 5, 5], true).unwrap();
        let y = t.conv2d_same(xv, kv, None).unwrap();
        let l = t.sum_all(y);
        t.backward(l).unwrap();
    });
}
