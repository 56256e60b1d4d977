use std::time::Instant;

use mpif::model::{Network, NetworkConfig};

mod common;

#[test]
fn full_size_shape_chain() {
    let t = Instant::now();
    let net = Network::new(&NetworkConfig::default()).unwrap();
    let out = net.infer(&common::random_tensor(0, &[1, 1, 45, 600])).unwrap();
    let chain: Vec<Vec<usize>> = out.trace.iter().map(|(_, s)| s.clone()).collect();
    assert_eq!(
        chain,
        vec![
            vec![16, 45, 600],
            vec![32, 45, 600],
            vec![64, 23, 300],
            vec![128, 12, 150],
            vec![256, 6, 75],
            vec![256, 1, 1],
        ]
    );
    assert_eq!(out.logits.shape(), [1, 2]);
    println!("full forward in {:?}, {} parameters", t.elapsed(), net.num_params());
}

#[test]
fn tiny_network_matches_finite_differences() {
    let r = common::network_gradient_check();
    println!("checked {} entries: max rel {:e}, max abs near zero {:e}", r.checked, r.max_rel, r.max_abs_near_zero);
    assert!(r.max_rel < common::NET_REL_TOL, "max relative error {}", r.max_rel);
    assert!(r.max_abs_near_zero < 1e-7, "max absolute error {}", r.max_abs_near_zero);
}

#[test]
fn every_op_matches_finite_differences() {
    for (name, r) in common::op_gradient_suite() {
        println!("{name}: {} entries, max rel {:e}, max abs near zero {:e}", r.checked, r.max_rel_err, r.max_abs_err_near_zero);
        assert!(r.passes(common::OP_REL_TOL, 1e-8), "{name}: {r:?}");
    }
}
