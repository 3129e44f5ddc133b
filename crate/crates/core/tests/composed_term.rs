mod common;

use common::{manufactured_w, max_relative_gap, mesh, quadratic_field_gap, random_field, random_field_gap};
use oseen_core::characteristics::{integrate_composed_term, ComposedIntegration};
use oseen_core::fe_space::{build_space, interpolate_vector, Constraint};

const DT: f64 = 1.0 / 64.0;

#[test]
fn random_fields_match_brute_force_oracle() {
    let gap = random_field_gap();
    assert!(gap <= 1e-8, "relative gap {gap:e}");
}

#[test]
fn global_quadratics_are_integrated_exactly() {
    let gap = quadratic_field_gap();
    assert!(gap <= 1e-12, "relative gap {gap:e}");
}

#[test]
fn quadrature_mode_converges_to_exact_mode() {
    let m = mesh(8);
    let p1 = build_space(&m, 1, Constraint::ZeroBoundary).unwrap();
    let v = build_space(&m, 2, Constraint::ZeroBoundary).unwrap();
    let wh = manufactured_w(0.0, &p1);
    let field = random_field(&v, 99);
    let exact = integrate_composed_term(&field, &wh, DT, ComposedIntegration::Exact).unwrap();
    let approx = integrate_composed_term(&field, &wh, DT, ComposedIntegration::Quadrature { degree: 9 }).unwrap();
    let gap = max_relative_gap(&approx.rhs, &exact.rhs);
    // kinks inside elements cap the accuracy of a single rule
    assert!(gap > 0.0 && gap < 0.1, "relative gap {gap:e}");
}

#[test]
fn constants_are_invariant_under_manufactured_map() {
    let m = mesh(8);
    let p1 = build_space(&m, 1, Constraint::ZeroBoundary).unwrap();
    let v = build_space(&m, 2, Constraint::None).unwrap();
    let field = interpolate_vector(&v, |_, _| [2.5, -1.0], 0.0).unwrap();
    let wh = manufactured_w(0.3, &p1);
    let out = integrate_composed_term(&field, &wh, DT, ComposedIntegration::Exact).unwrap();
    for (i, &m_i) in v.dof_integrals().iter().enumerate() {
        assert!((out.rhs[0][i] - 2.5 * m_i).abs() <= 1e-14);
        assert!((out.rhs[1][i] + m_i).abs() <= 1e-14);
    }
}
