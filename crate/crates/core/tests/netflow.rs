use async_blockopt::certify::solve_reference;
use async_blockopt::experiment::{ExperimentConfig, InstanceSpec};
use async_blockopt::netflow::{self, RegularizationChoice};
use async_blockopt::problem::{Interval, NormOrder, Regularization};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ROUTE_TEXT: &str = "\
# agent: edges
1 e1 e3 e6
2 e4 e7 e8
3 e2, e4, e7, e5
4 3 4 7
5 1 3 6 7 5
6 2 4 9
7 5 8 9 6
8 7 4
";

#[test]
fn route_table_text_gives_the_published_routes() {
    let parsed = netflow::parse_route_table(ROUTE_TEXT).unwrap();
    assert_eq!(parsed, netflow::paper_routes());
    assert!(netflow::parse_route_table("1 1 2\n3 4\n").is_err());
    assert!(netflow::parse_route_table("1 x\n").is_err());
}

#[test]
fn connection_matrix_counts_routes_per_edge() {
    let c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, 9).unwrap();
    assert_eq!((c.nrows(), c.ncols()), (9, 8));
    let loads: Vec<f64> = (0..9).map(|e| c.row(e).sum()).collect();
    assert_eq!(loads, vec![2.0, 2.0, 3.0, 5.0, 3.0, 3.0, 5.0, 2.0, 2.0]);
    for (j, route) in netflow::PAPER_ROUTES.iter().enumerate() {
        assert_eq!(c.column(j).sum(), route.len() as f64);
        for &e in route.iter() {
            assert_eq!(c[(e - 1, j)], 1.0);
        }
    }
    assert!(netflow::build_connection_matrix(&[vec![10]], 9).is_err());
    assert!(netflow::build_connection_matrix(&[vec![0]], 9).is_err());
}

#[test]
fn congestion_is_scaled_squared_edge_load() {
    let p = netflow::paper_problem();
    let c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x = p.sample_point(&mut rng);
        let load = &c * DVector::from_column_slice(&x);
        let expected = load.norm_squared() / 20.0;
        let got = p.cost().coupling_cost(&x);
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }
}

#[test]
fn published_layout_has_the_published_norms() {
    let l = netflow::paper_layout();
    assert_eq!(l.agents(), 8);
    assert_eq!(l.block(0).order, NormOrder::Infinity);
    for (i, (w, p)) in netflow::PAPER_WEIGHTS
        .iter()
        .zip(netflow::PAPER_NORMS)
        .enumerate()
    {
        assert_eq!(l.block(i).weight, *w);
        assert_eq!(l.block(i).order.as_f64(), p);
    }
}

#[test]
fn invalid_instances_are_rejected() {
    let layout = netflow::paper_layout();
    let mut c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, 9).unwrap();
    c[(0, 0)] = 0.5;
    assert!(
        netflow::build_problem(&c, layout.clone(), 100.0, 0.05, Interval::new(0.0, 20.0)).is_err()
    );
    let c = netflow::build_connection_matrix(&netflow::PAPER_ROUTES, 9).unwrap();
    assert!(
        netflow::build_problem(&c, layout.clone(), 100.0, 0.05, Interval::new(-1.0, 20.0)).is_err()
    );
    assert!(netflow::build_problem(&c, layout, -1.0, 0.05, Interval::new(0.0, 20.0)).is_err());
    let p = netflow::paper_problem();
    assert!(netflow::regularization_for(&p, &[0.1; 7], None).is_err());
    assert!(netflow::regularization_for(&p, &[0.1; 8], Some(1.0)).is_err());
}

#[test]
fn unregularized_optimum_is_interior_and_stable() {
    let p = netflow::paper_problem();
    let reg = Regularization::unregularized(8, 1.0).unwrap();
    let x = solve_reference(&p, &reg, 1e-12).unwrap();
    let golden = [
        12.4894, 8.6118, 6.9088, 7.9172, 6.2642, 10.9332, 9.9543, 10.6997,
    ];
    for (a, b) in x.iter().zip(golden) {
        assert!((a - b).abs() < 1e-3, "{x:?}");
    }
    let g = p.grad(&reg, &x).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
}

#[test]
fn regularization_choice_parses_loosely() {
    assert_eq!(
        "a2".parse::<RegularizationChoice>().unwrap(),
        RegularizationChoice::A2
    );
    assert_eq!(
        " A3 ".parse::<RegularizationChoice>().unwrap(),
        RegularizationChoice::A3
    );
    assert!("A4".parse::<RegularizationChoice>().is_err());
}

#[test]
fn custom_instance_from_toml_matches_published_instance() {
    let text = r#"
seed = 5
ticks = 10

[instance]
kind = "custom"
routes = [[1, 3, 6], [4, 7, 8], [2, 4, 7, 5], [3, 4, 7], [1, 3, 6, 7, 5], [2, 4, 9], [5, 8, 9, 6], [7, 4]]
alphas = [0.01, 0.01, 0.003, 0.005, 0.002, 0.01, 0.005, 0.002]
weights = [12, 8, 6, 7, 6, 10, 9, 10]
norms = ["inf", 20, 3, 90, 6, 12, 2, 9]
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert!(matches!(cfg.instance, InstanceSpec::Custom { .. }));
    let (custom, alphas) = cfg.instance.build().unwrap();
    assert_eq!(alphas, RegularizationChoice::A2.diagonal().to_vec());
    let paper = netflow::paper_problem();
    assert_eq!(custom.layout(), paper.layout());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reg = Regularization::new(alphas, 0.001).unwrap();
    for _ in 0..20 {
        let x = paper.sample_point(&mut rng);
        assert_eq!(
            custom.eval_f_a(&reg, &x).unwrap(),
            paper.eval_f_a(&reg, &x).unwrap()
        );
    }
}
