use sparse_svm_core::{dataio, relaxations};
#[test]
fn dscop_40() {
    let data = dataio::synth_dataset(15, 5, 40);
    match relaxations::solve_dscop(&data, 1.0, 2) {
        Ok(v) => println!("ok lb {}", v.lower_bound),
        Err(e) => println!("err {e}"),
    }
}
