use fnas::analysis::spearman;
use fnas::eval::latency::CostTable;
use fnas::eval::toy::{toy_train, ToyDataset, ToyTrainOptions};
use fnas::space::SpaceSchema;
use rayon::prelude::*;

fn main() {
    let s = SpaceSchema::default_space();
    let data = ToyDataset::rings(21);
    let table = CostTable::default_for(&s);
    let mut rng = fnas::rng::derive(77, &[fnas::rng::stream::ANALYSIS, 3]);
    let n = 30;
    let archs: Vec<_> = (0..n).map(|_| s.sample_uniform(&mut rng)).collect();
    let t0 = std::time::Instant::now();
    let run = |seed_base: u64| -> Vec<f64> {
        archs.par_iter().enumerate().map(|(i, t)| {
            toy_train(t, &s, None, &ToyTrainOptions::new(200, seed_base + i as u64), &data, &table).unwrap().accuracy
        }).collect()
    };
    let a = run(1000);
    let b = run(9000);
    println!("elapsed: {:?}", t0.elapsed());
    let mut sorted = a.clone(); sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    println!("final accs (run A sorted): {:?}", sorted.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    println!("test-retest spearman: {:.3}", spearman(&a, &b).unwrap());
}
