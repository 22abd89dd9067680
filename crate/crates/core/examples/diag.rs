// scratch diagnostic
fn main() {
    for name in ["han_forward", "cnn_forward", "full_model"] {
        let mut fails = Vec::new();
        let mut worst = 0.0f64;
        for seed in 0..200u64 {
            let opts = genrefuse_core::tensor::GradCheckOptions {
                max_coords: 40,
                ..Default::default()
            };
            let err = genrefuse_core::verify::run_one(name, seed, &opts).unwrap();
            if err > worst { worst = err; }
            if err >= 1e-4 { fails.push((seed, err)); }
        }
        println!("{name}: worst={worst:.2e} fails({}): {:?}", fails.len(), &fails[..fails.len().min(8)]);
    }
}
