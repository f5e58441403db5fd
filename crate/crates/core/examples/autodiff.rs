//! The reverse-mode tape on a small least-squares fit: `y = a x + b`
//! recovered by Adam.

use ilslam::diff::{adam_step, AdamConfig, ParamStore, Tape, Tensor};

fn main() {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
    let x = Tensor::column(xs);
    let y = Tensor::column(ys);

    let mut store = ParamStore::new();
    let a = store.insert("a", Tensor::scalar(0.0));
    let b = store.insert("b", Tensor::scalar(0.0));
    let cfg = AdamConfig::default();
    for step in 0..=600 {
        let grads = {
            let mut tape = Tape::new(&store);
            let (av, bv) = (tape.param(a), tape.param(b));
            let xv = tape.constant(x.clone());
            let yv = tape.constant(y.clone());
            let ax = tape.matmul(xv, av);
            let pred = tape.add_row(ax, bv);
            let r = tape.sub(pred, yv);
            let sq = tape.square(r);
            let loss = tape.mean_all(sq);
            if step % 150 == 0 {
                println!("step {step:>3}: loss {:.6}", tape.value(loss).item());
            }
            tape.backward(loss).unwrap()
        };
        store.zero_grad();
        store.accumulate(&grads);
        adam_step(&mut store, &cfg, |_| Some(0.05));
    }
    println!("a = {:.4}, b = {:.4}", store.value(a).item(), store.value(b).item());
}
