use gnwm::envs::TspInstance;
use gnwm::opt::{Adam, AdamConfig};
use gnwm::tensor::Tape;
use gnwm::thermo;
use gnwm::topology::{argmax, GridTopology};
use gnwm::tsp::{elastic_penalty, extract_tour, ring_forward};

fn main() {
    let inst = TspInstance::unit_square_corners();
    let c = 4;
    let n = 10;
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps = 1000;
    let sigma0 = 2.5;
    let sigma_end = 0.5;
    let lambda0 = 1.0;

    // rebuild RingNet by hand (same init as tsp.rs)
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut z = seed ^ 0u64.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    let mut rng = ChaCha8Rng::seed_from_u64(z ^ (z >> 31));
    let mut mk = |rows: usize, cols: usize, fan_in: usize| -> gnwm::tensor::Tensor {
        let s = (1.0 / fan_in as f64).sqrt();
        let vals = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
        gnwm::tensor::Tensor::param(vals, vec![rows, cols]).unwrap()
    };
    let w1 = mk(2, 64, 2);
    let w2 = mk(64, n, 64);
    let b1_vals: Vec<f64> = (0..64).map(|_| rng.random_range(-0.35..0.35)).collect();
    let mut params = vec![
        w1,
        gnwm::tensor::Tensor::param(b1_vals, vec![64]).unwrap(),
        w2,
        gnwm::tensor::Tensor::param(vec![0.0; n], vec![n]).unwrap(),
    ];
    let sizes: Vec<usize> = params.iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &sizes);
    let city_values: Vec<f64> =
        inst.cities.iter().flat_map(|(x, y)| [*x - 0.5, *y - 0.5]).collect();

    for step in 0..steps {
        let f = step as f64 / (steps - 1) as f64;
        let sigma = sigma0 * (sigma_end / sigma0_val(sigma0)).powf(f);
        let lambda = lambda0 * sigma / sigma0;
        let topo = GridTopology::ring(n, sigma).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|t| tape.param(t)).collect();
        let cities = tape.constant(city_values.clone(), vec![c, 2]).unwrap();
        let assign = ring_forward(&mut tape, &vars, cities, &topo).unwrap();
        let g = thermo::thermo_graph(&mut tape, assign, assign, 1.0, 0.0).unwrap();
        let elastic = elastic_penalty(&mut tape, assign, cities).unwrap();
        let scaled = tape.scale(elastic, lambda);
        let loss = tape.add(g.total, scaled).unwrap();
        tape.backward(loss).unwrap();
        let grads: Vec<Option<&[f64]>> = vars.iter().map(|v| tape.grad(*v)).collect();
        adam.step(&mut params, &grads);

        if step % 100 == 0 || step == steps - 1 {
            let a = tape.values(assign);
            let nodes: Vec<usize> = (0..c).map(|i| argmax(&a[i * n..(i + 1) * n])).collect();
            let max_per_row: Vec<f64> = (0..c)
                .map(|i| a[i * n..(i + 1) * n].iter().cloned().fold(0.0, f64::max))
                .collect();
            let tour = extract_tour(a, n, &inst);
            println!(
                "step {step}: sigma={sigma:.2} lambda={lambda:.3} thermo={:.4} elastic={:.4} nodes={nodes:?} rowmax={max_per_row:.2?} len={:.4}",
                tape.values(g.total)[0],
                tape.values(elastic)[0],
                tour.length
            );
        }
    }
}

fn sigma0_val(s: f64) -> f64 { s }
