use nalgebra::DMatrix;
use ppac::engine::{NetworkState, Simulator};
use ppac::linalg::{dot, projector, sym_eigen, Matrix};
use ppac::schedule::{OrthoVectorSet, StaticWeights};
use ppac::topology::{EdgeMap, Topology};
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| {
        let a = Matrix::from_row_major(n, n, v).unwrap();
        (&a + &a.transpose()).scale(0.5)
    })
}

proptest! {
    #[test]
    fn eigenvalues_match_nalgebra(m in (1usize..8).prop_flat_map(symmetric)) {
        let ours = sym_eigen(&m).unwrap();
        let theirs = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice()).symmetric_eigen();
        let mut expect: Vec<f64> = theirs.eigenvalues.iter().copied().collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in ours.values.iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        for i in 0..m.rows() {
            let v = ours.vector(i);
            let mv = m.matvec(&v);
            for (x, y) in mv.iter().zip(&v) {
                prop_assert!((x - ours.values[i] * y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projectors_are_idempotent(v in prop::collection::vec(-3.0..3.0f64, 1..8)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let p = projector(&v).unwrap();
        prop_assert!((&p * &p).max_abs_diff(&p) < 1e-12);
        prop_assert!(p.is_symmetric(1e-14));
        prop_assert!((p.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ortho_sets_are_orthogonal(d in 1usize..6, dv in 3usize..6) {
        let set = OrthoVectorSet::build(d, dv).unwrap();
        let vs = set.vectors();
        for i in 0..vs.len() {
            for j in 0..i {
                prop_assert!(dot(&vs[i], &vs[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn static_psd_weights_conserve_the_mean(
        seed in any::<u64>(),
        n in 2usize..6,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 3;
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
        let topo = Topology::new(n, &edges, &[]).unwrap();
        let mut map = EdgeMap::new();
        for e in topo.edges() {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            map.insert(e, projector(&v).unwrap().scale(0.1));
        }
        let w = StaticWeights::new(dim, map).unwrap();
        let x0 = NetworkState::new(
            (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect(),
        ).unwrap();
        let traj = Simulator::new(&topo, &w, 0.5).run(&x0, 50).unwrap();
        prop_assert!(traj.conservation_residual() < 1e-12);
    }
}
