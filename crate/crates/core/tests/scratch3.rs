use sparse_svm_core::{dataio, relaxations};
#[test]
fn dscop_hard() {
    let data = dataio::synth_dataset(15, 5, 33);
    let r = relaxations::solve_dscop(&data, 1.0, 2);
    match r {
        Ok(v) => println!("ok lb {}", v.lower_bound),
        Err(e) => println!("err {e}"),
    }
}
