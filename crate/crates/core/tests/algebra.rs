use std::collections::BTreeMap;
use std::time::Instant;

use fracinv::crdop::{apply_operator, compose, CRDOperator, UPoly};
use fracinv::expr::{kpoly, symexpr, upoly};
use fracinv::funcalg::*;
use fracinv::invariance::*;
use fracinv::subspace::*;
use proptest::prelude::*;

/// Polynomial with `K1, K2, ...` read as the amplitudes κ_m.
fn kap(src: &str) -> KPoly {
    kpoly(src).unwrap().substitute(&|v| match v {
        Var::Sym(s) if s.starts_with('K') => s[1..].parse().ok().map(KPoly::kappa),
        _ => None,
    })
}

fn sx(src: &str) -> SymExpr {
    symexpr(src).unwrap()
}

fn rate_ode(axis: Axis, coeffs: &[&str]) -> LinearODE {
    let forms = coeffs
        .iter()
        .map(|c| match *c {
            "0" => RateForm::zero(),
            s => RateForm::symbol(s, q(1)),
        })
        .collect();
    LinearODE::new(axis, forms).unwrap()
}

fn ode(axis: Axis, coeffs: &[i64]) -> LinearODE {
    LinearODE::rational(axis, &coeffs.iter().map(|&c| q(c)).collect::<Vec<_>>()).unwrap()
}

/// The operator of the worked example: quadratic diffusion, linear convection
/// and reaction.
fn example_operator() -> CRDOperator {
    let e = BTreeMap::new();
    CRDOperator::new(
        upoly("c2*u^2 + c1*u + c0", &e).unwrap(),
        upoly("beta2*u^2 + beta1*u + beta0", &e).unwrap(),
        upoly("d1*u + d0", &e).unwrap(),
        upoly("lambda1*u + lambda0", &e).unwrap(),
        upoly("k1*u + k0", &e).unwrap(),
    )
}

fn cubic_operator() -> CRDOperator {
    CRDOperator::new(
        UPoly::symbolic("c", 2),
        UPoly::symbolic("beta", 2),
        UPoly::symbolic("d", 2),
        UPoly::symbolic("lambda", 2),
        UPoly::symbolic("k", 3),
    )
}

fn bind(pairs: &[(&str, f64)]) -> Bindings {
    let mut b = Bindings::new();
    for (k, v) in pairs {
        b.set_sym(k, *v);
    }
    b
}

// ---------------------------------------------------------------- funcalg

#[test]
fn term_products() {
    let x1 = CanonicalTerm::power(Axis::X1, 1);
    let x2 = CanonicalTerm::power(Axis::X2, 1);
    assert_eq!(term_mul(&x1, &x2), sx("x1*x2"));

    let e = CanonicalTerm::exp(Axis::X1, RateForm::symbol("a0", q(-1)));
    let sq = term_mul(&e, &e);
    assert_eq!(sq.len(), 1);
    let (t, c) = sq.terms().next().unwrap();
    assert_eq!(*c, KPoly::one());
    assert_eq!(t.rate(Axis::X1), &RateForm::symbol("a0", q(-2)));
}

#[test]
fn sine_square_linearizes() {
    let s = sx("sin(w*x2)");
    let p = expr_mul(&s, &s);
    assert_eq!(p, sx("1/2 - cos(2*w*x2)/2"));
    let mut seed = 7u64;
    for _ in 0..20 {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let x2 = (seed >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0;
        let w = 0.3 + (seed % 1000) as f64 / 500.0;
        let b = bind(&[("w", w)]);
        let direct = (w * x2).sin().powi(2);
        assert!((p.eval(0.0, x2, &b).unwrap() - direct).abs() < 1e-13);
    }
    assert!((p.eval(0.0, std::f64::consts::FRAC_PI_4, &bind(&[("w", 1.0)])).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn products_of_sums() {
    assert!(expr_mul(&SymExpr::zero(), &sx("x1 + exp(x2)")).is_zero());

    let mut u = SymExpr::constant(KPoly::kappa(1));
    u = u.add(&sx("x1").scale(&KPoly::kappa(2)));
    let want =
        SymExpr::constant(kap("K1^2")).add(&sx("x1").scale(&kap("2*K1*K2"))).add(&sx("x1^2").scale(&kap("K2^2")));
    assert_eq!(expr_mul(&u, &u), want);

    // (δ1 + δ2 x1 + δ3 x2)^2 against the nine-term expansion
    let members = [sx("1"), sx("x1"), sx("x2")];
    let u = assemble(&[kap("K1"), kap("K2"), kap("K3")], &members);
    let mut brute = SymExpr::zero();
    for i in 0..3 {
        for j in 0..3 {
            let c = &KPoly::kappa(i as u32 + 1) * &KPoly::kappa(j as u32 + 1);
            brute = brute.add(&members[i].mul(&members[j]).scale(&c));
        }
    }
    let sq = expr_mul(&u, &u);
    assert_eq!(sq, brute);
    assert_eq!(sq.coeff(&sx("x1*x2").terms().next().unwrap().0.clone()), kap("2*K2*K3"));
}

#[test]
fn derivatives() {
    assert_eq!(sx("x1^2").diff(Axis::X1), sx("2*x1"));
    assert_eq!(sx("exp(-a0*x1)").diff(Axis::X1), sx("exp(-a0*x1)").scale(&kpoly("-a0").unwrap()));
    let e = sx("exp(-b0*x2)*sin(w*x2)");
    let want = e.scale(&kpoly("-b0").unwrap()).add(&sx("exp(-b0*x2)*cos(w*x2)").scale(&kpoly("w").unwrap()));
    assert_eq!(diff(&e, Axis::X2), want);
}

#[test]
fn evaluation() {
    assert_eq!(eval(&sx("x1*x2"), (2.0, 3.0), &Bindings::new()).unwrap(), 6.0);
    assert_eq!(eval(&sx("exp(-a0*x1)"), (1.0, 0.0), &bind(&[("a0", 0.0)])).unwrap(), 1.0);
    let e = sx("1/2 - cos(2*w*x2)/2");
    let v = eval(&e, (0.0, std::f64::consts::FRAC_PI_4), &bind(&[("w", 1.0)])).unwrap();
    let direct = std::f64::consts::FRAC_PI_4.sin().powi(2);
    assert!((v - direct).abs() < 1e-15);
    let err = eval(&sx("exp(-a0*x1)"), (1.0, 0.0), &Bindings::new()).unwrap_err();
    assert!(err.to_string().contains("a0"), "{err}");
}

#[test]
fn span_coordinates() {
    let members = [sx("1"), sx("x1"), sx("x2")];
    let (c, r) = coordinates_in_span(&sx("3 + 5*x1"), &members).unwrap();
    assert_eq!(c, vec![KPoly::int(3), KPoly::int(5), KPoly::zero()]);
    assert!(r.is_zero());

    let (_, r) = coordinates_in_span(&sx("x1*x2"), &members).unwrap();
    assert_eq!(r, sx("x1*x2"));

    let (c, r) = coordinates_in_span(&sx("x1").scale(&kap("K1^2")), &[sx("1"), sx("x1")]).unwrap();
    assert_eq!(c, vec![KPoly::zero(), kap("K1^2")]);
    assert!(r.is_zero());

    let err = coordinates_in_span(&sx("x1"), &[sx("x1"), sx("1"), sx("2*x1 - 3")]).unwrap_err();
    match err {
        AlgebraError::Dependent { witness } => {
            let w: Vec<KPoly> = witness.iter().cloned().map(KPoly::constant).collect();
            assert!(w.iter().any(|c| !c.is_zero()));
            assert!(assemble(&w, &[sx("x1"), sx("1"), sx("2*x1 - 3")]).is_zero());
        }
        e => panic!("{e}"),
    }
}

/// Closed-class expression built from a small random description.
fn arb_expr() -> impl Strategy<Value = String> {
    let term = (-4i32..=4, 0u32..3, 0u32..3, -2i32..=2, -2i32..=2, 0u8..3, 1i32..=3);
    prop::collection::vec(term, 1..4).prop_map(|ts| {
        let parts: Vec<String> = ts
            .into_iter()
            .map(|(c, p1, p2, r1, r2, kind, w)| {
                let osc = match kind {
                    0 => String::new(),
                    1 => format!("*sin({w}*x2)"),
                    _ => format!("*cos({w}*x1)"),
                };
                format!("({c}/3)*x1^{p1}*x2^{p2}*exp(({r1}/2)*x1 + ({r2}/3)*x2){osc}")
            })
            .collect();
        parts.join(" + ")
    })
}

fn arb_point() -> impl Strategy<Value = (f64, f64)> {
    (-1.0f64..1.0, -1.0f64..1.0)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_evaluates_to_product(e1 in arb_expr(), e2 in arb_expr(), pts in prop::collection::vec(arb_point(), 20)) {
        let (a, b) = (sx(&e1), sx(&e2));
        let p = expr_mul(&a, &b);
        let nb = Bindings::new();
        for (x1, x2) in pts {
            let want = a.eval(x1, x2, &nb).unwrap() * b.eval(x1, x2, &nb).unwrap();
            prop_assert!(close(p.eval(x1, x2, &nb).unwrap(), want, 1e-10));
        }
    }

    #[test]
    fn mixed_partials_commute(e in arb_expr()) {
        let e = sx(&e);
        prop_assert_eq!(e.diff(Axis::X1).diff(Axis::X2), e.diff(Axis::X2).diff(Axis::X1));
    }

    #[test]
    fn derivative_matches_difference_quotient(e in arb_expr(), (x1, x2) in arb_point()) {
        let e = sx(&e);
        let nb = Bindings::new();
        let h = 1e-5;
        let fd = (e.eval(x1 + h, x2, &nb).unwrap() - e.eval(x1 - h, x2, &nb).unwrap()) / (2.0 * h);
        prop_assert!(close(e.diff(Axis::X1).eval(x1, x2, &nb).unwrap(), fd, 1e-6));
    }

    #[test]
    fn reassembly_recovers_projection(e in arb_expr(), k in 1usize..5) {
        let members: Vec<SymExpr> = ["1", "x1", "x2", "exp(x1/2)", "x1*x2*sin(x2)"][..k].iter().map(|s| sx(s)).collect();
        let e = sx(&e);
        let (c, r) = coordinates_in_span(&e, &members).unwrap();
        prop_assert_eq!(assemble(&c, &members), e.sub(&r));
    }

    #[test]
    fn normalization_is_idempotent(e in arb_expr()) {
        let e = sx(&e);
        let mut again = SymExpr::zero();
        for (t, c) in e.terms() {
            again.add_term(t.clone(), c.clone());
        }
        prop_assert_eq!(&again, &e);
        prop_assert_eq!(again.add(&SymExpr::zero()), e.clone());
        prop_assert!(e.sub(&e).is_zero());
    }

    #[test]
    fn kpoly_ring_laws(a in -5i64..5, b in -5i64..5, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let p = kpoly(&format!("{a}*s^2 + t - 1")).unwrap();
        let r = kpoly(&format!("s*t + {b}")).unwrap();
        let s = kpoly("s - t^3/2").unwrap();
        prop_assert_eq!(&p * &r, &r * &p);
        prop_assert_eq!(&p + &r, &r + &p);
        prop_assert_eq!(&(&p * &r) * &s, &p * &(&r * &s));
        prop_assert_eq!(&(&p + &r) + &s, &p + &(&r + &s));
        let bnd = bind(&[("s", x), ("t", y)]);
        let lhs = (&(&p * &r) + &s).eval(&bnd).unwrap();
        let rhs = p.eval(&bnd).unwrap() * r.eval(&bnd).unwrap() + s.eval(&bnd).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12));
        prop_assert!((&p - &p).is_empty());
    }
}

// ---------------------------------------------------------------- subspace

#[test]
fn ode_bases() {
    let b = ode_basis(&rate_ode(Axis::X1, &["0", "a1"])).unwrap();
    assert_eq!(b.members, vec![sx("1"), sx("exp(-a1*x1)")]);

    let b = ode_basis(&ode(Axis::X1, &[0, 0])).unwrap();
    assert_eq!(b.members, vec![sx("1"), sx("x1")]);

    // D² + b0 with b0 symbolic: frequency symbol tied to b0
    let b = ode_basis(&rate_ode(Axis::X2, &["b0", "0"])).unwrap();
    assert_eq!(b.members.len(), 2);
    let names: Vec<String> = b.members.iter().map(|m| m.to_string()).collect();
    assert!(names.iter().any(|s| s.contains("sin")) && names.iter().any(|s| s.contains("cos")), "{names:?}");
    assert!(!b.relations.is_empty());

    // numeric b0 = 4 gives rational frequency 2
    let b = ode_basis(&ode(Axis::X2, &[4, 0])).unwrap();
    assert_eq!(b.members.len(), 2);
    for m in &b.members {
        assert!(m == &sx("sin(2*x2)") || m == &sx("cos(2*x2)"), "{m}");
    }

    // (D - 1)^2 (D + 2): repeated root gives x e^x
    let b = ode_basis(&ode(Axis::X1, &[2, -3, 0])).unwrap();
    assert!(b.members.contains(&sx("x1*exp(x1)")), "{:?}", b.members);
}

#[test]
fn product_spaces() {
    let v = build_type1(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    assert_eq!(v.dimension(), 4);
    for m in ["1", "x1", "x2", "x1*x2"] {
        assert!(v.members().contains(&sx(m)));
    }
    let v = build_type1(&rate_ode(Axis::X1, &["a0"]), &rate_ode(Axis::X2, &["b0"])).unwrap();
    assert_eq!(v.members(), &[sx("exp(-a0*x1 - b0*x2)")]);
    let v = build_type1(&ode(Axis::X1, &[0]), &ode(Axis::X2, &[0])).unwrap();
    assert_eq!(v.members(), &[sx("1")]);
}

#[test]
fn sum_spaces() {
    let v = build_type2(&rate_ode(Axis::X1, &["0", "a1"]), &rate_ode(Axis::X2, &["0", "b1"])).unwrap();
    assert_eq!(v.members(), &[sx("1"), sx("exp(-a1*x1)"), sx("exp(-b1*x2)")]);
    let v = build_type2(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    assert_eq!(v.members(), &[sx("1"), sx("x1"), sx("x2")]);
    let v = build_type2(&ode(Axis::X1, &[0, 0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    assert_eq!(v.members(), &[sx("1"), sx("x1"), sx("x1^2/2"), sx("x2")]);

    let err = build_type2(&rate_ode(Axis::X1, &["a0", "a1"]), &ode(Axis::X2, &[0, 0])).unwrap_err();
    assert!(err.to_string().contains("a_0=b_0=0"), "{err}");
}

fn arb_ode(axis: Axis, type2: bool) -> impl Strategy<Value = LinearODE> {
    prop::collection::vec(-3i64..=3, 1..=3).prop_map(move |mut c| {
        if type2 {
            c[0] = 0;
        }
        ode(axis, &c)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dimensions_and_inclusion(o1 in arb_ode(Axis::X1, true), o2 in arb_ode(Axis::X2, true)) {
        let t1 = build_type1(&o1, &o2).unwrap();
        let t2 = build_type2(&o1, &o2).unwrap();
        prop_assert_eq!(t1.dimension(), o1.order() * o2.order());
        prop_assert_eq!(t2.dimension(), o1.order() + o2.order() - 1);
        prop_assert!(t2.members().contains(&SymExpr::one()));
        for m in t2.members() {
            let (_, r) = coordinates_in_span(m, t1.members()).unwrap();
            prop_assert!(r.is_zero());
        }
    }

    #[test]
    fn members_solve_their_odes(o1 in arb_ode(Axis::X1, false), o2 in arb_ode(Axis::X2, false)) {
        let v = build_type1(&o1, &o2).unwrap();
        for (axis, o) in [(Axis::X1, &o1), (Axis::X2, &o2)] {
            for m in v.members() {
                let mut acc = SymExpr::zero();
                let mut d = m.clone();
                for c in &o.coeffs {
                    acc = acc.add(&d.scale(&c.to_kpoly()));
                    d = d.diff(axis);
                }
                acc = acc.add(&d);
                for (x1, x2) in [(0.3, -0.2), (-0.7, 0.9)] {
                    let r = acc.eval(x1, x2, &v.bindings).unwrap();
                    let s = m.eval(x1, x2, &v.bindings).unwrap().abs().max(1.0);
                    prop_assert!(r.abs() < 1e-8 * s, "{} residual {}", m, r);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- crdop

#[test]
fn composition() {
    let u = sx("x1").scale(&KPoly::kappa(1));
    let e = BTreeMap::new();
    assert_eq!(compose(&upoly("u^2", &e).unwrap(), &u).unwrap(), sx("x1^2").scale(&kap("K1^2")));
    assert_eq!(
        compose(&upoly("c1*u + c0", &e).unwrap(), &SymExpr::zero()).unwrap(),
        SymExpr::constant(kpoly("c0").unwrap())
    );
    let u = assemble(&[kap("K1"), kap("K2")], &[sx("1"), sx("x1")]);
    let cube = compose(&upoly("u^3", &e).unwrap(), &u).unwrap();
    assert_eq!(cube.coeff(&sx("x1^2").terms().next().unwrap().0.clone()), kap("3*K1*K2^2"));
}

#[test]
fn operator_on_linear_functions() {
    let op = example_operator();
    let u = assemble(&[kap("K1"), kap("K2"), kap("K3")], &[sx("1"), sx("x1"), sx("x2")]);
    let k = apply_operator(&op, &u).unwrap();
    let x1 = sx("x1").terms().next().unwrap().0.clone();
    let want = kap("2*c2*K2^3 + d1*K2^2 + 2*beta2*K2*K3^2 + K2*K3*lambda1 + k1*K2");
    assert_eq!(k.coeff(&x1), want);

    let u4 = u.add(&sx("x1*x2").scale(&KPoly::kappa(4)));
    let k4 = apply_operator(&op, &u4).unwrap();
    let x2sq = sx("x2^2").terms().next().unwrap().0.clone();
    assert!(!k4.coeff(&x2sq).is_zero());
    let x1x2cube = sx("x1*x2^3").terms().next().unwrap().0.clone();
    assert_eq!(k4.coeff(&x1x2cube), kap("2*c2*K4^3"));

    assert!(apply_operator(&CRDOperator::default(), &u4).unwrap().is_zero());
}

fn arb_upoly(max_deg: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-3i64..=3, 0..=max_deg + 1)
}

fn rational_upoly(c: &[i64]) -> UPoly {
    UPoly::rational(&c.iter().map(|&v| qr(v, 2)).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_matches_finite_differences(
        parts in prop::collection::vec(arb_upoly(2), 5),
        u in arb_expr(),
        (x1, x2) in arb_point(),
    ) {
        let op = CRDOperator::new(
            rational_upoly(&parts[0]), rational_upoly(&parts[1]), rational_upoly(&parts[2]),
            rational_upoly(&parts[3]), rational_upoly(&parts[4]),
        );
        let u = sx(&u);
        let nb = Bindings::new();
        let k = apply_operator(&op, &u).unwrap().eval(x1, x2, &nb).unwrap();
        // flux form with central differences of the flux
        let h = 1e-4;
        let f = |a: f64, b: f64| u.eval(a, b, &nb).unwrap();
        let flux1 = |a: f64, b: f64| op.a1.eval(f(a, b), &nb).unwrap() * (f(a + h, b) - f(a - h, b)) / (2.0 * h);
        let flux2 = |a: f64, b: f64| op.a2.eval(f(a, b), &nb).unwrap() * (f(a, b + h) - f(a, b - h)) / (2.0 * h);
        let u0 = f(x1, x2);
        let fd = (flux1(x1 + h, x2) - flux1(x1 - h, x2)) / (2.0 * h)
            + (flux2(x1, x2 + h) - flux2(x1, x2 - h)) / (2.0 * h)
            + op.b1.eval(u0, &nb).unwrap() * (f(x1 + h, x2) - f(x1 - h, x2)) / (2.0 * h)
            + op.b2.eval(u0, &nb).unwrap() * (f(x1, x2 + h) - f(x1, x2 - h)) / (2.0 * h)
            + op.c.eval(u0, &nb).unwrap();
        prop_assert!((k - fd).abs() <= 1e-5 * k.abs().max(fd.abs()).max(1.0), "symbolic {} vs fd {}", k, fd);
    }

    #[test]
    fn linear_operators_are_linear(
        a in prop::collection::vec(-3i64..=3, 4),
        c in prop::collection::vec(-3i64..=3, 2),
        u in arb_expr(),
        v in arb_expr(),
        s in -3i64..=3,
    ) {
        let op = CRDOperator::new(
            rational_upoly(&a[0..1]), rational_upoly(&a[1..2]), rational_upoly(&a[2..3]),
            rational_upoly(&a[3..4]), rational_upoly(&[0, c[1]]),
        );
        prop_assert!(op.is_linear());
        let (u, v) = (sx(&u), sx(&v));
        let lhs = apply_operator(&op, &u.add(&v.scale_q(&q(s)))).unwrap();
        let rhs = apply_operator(&op, &u).unwrap().add(&apply_operator(&op, &v).unwrap().scale_q(&q(s)));
        prop_assert_eq!(lhs, rhs);
    }
}

// ---------------------------------------------------------------- invariance

#[test]
fn worked_example_spaces() {
    let t = Instant::now();
    let op = example_operator();
    let v3 = build_type2(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    let r = check_invariance(&op, &v3).unwrap();
    assert!(r.invariant);
    assert!(r.residual.is_zero());
    assert_eq!(r.psi[1], kap("2*c2*K2^3 + d1*K2^2 + 2*beta2*K2*K3^2 + K2*K3*lambda1 + k1*K2"));
    assert_eq!(r.psi[2], kap("2*c2*K2^2*K3 + K3^2*lambda1 + 2*beta2*K3^3 + d1*K2*K3 + k1*K3"));
    assert_eq!(
        r.psi[0],
        kap("2*c2*K1*K2^2 + 2*beta2*K1*K3^2 + c1*K2^2 + d1*K1*K2 + beta1*K3^2 + K1*K3*lambda1 + d0*K2 + k1*K1 + K3*lambda0 + k0")
    );

    let v4 = build_type1(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    let r = check_invariance(&op, &v4).unwrap();
    assert!(!r.invariant);
    let outside: Vec<String> = r.residual.terms().map(|(t, _)| t.to_string()).collect();
    for want in ["x1^2", "x2^2"] {
        let term = sx(want).terms().next().unwrap().0.clone();
        assert!(!r.residual.coeff(&term).is_zero(), "{want} missing from {outside:?}");
    }
    assert!(r.witness.is_some());
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn linear_operators_preserve_table_spaces() {
    let heat = CRDOperator::new(
        UPoly::constant(KPoly::sym("c0")),
        UPoly::constant(KPoly::sym("c0")),
        UPoly::zero(),
        UPoly::zero(),
        UPoly::new(vec![KPoly::zero(), KPoly::sym("k1")]).unwrap(),
    );
    let spaces = [
        build_type2(&rate_ode(Axis::X1, &["0", "a1"]), &rate_ode(Axis::X2, &["0", "b1"])).unwrap(),
        build_type1(&rate_ode(Axis::X1, &["a0"]), &rate_ode(Axis::X2, &["b0"])).unwrap(),
        build_type1(&ode(Axis::X1, &[0, 0, 0]), &ode(Axis::X2, &[1, 0])).unwrap(),
        SubspaceBasis::custom(vec![sx("exp(-a0*x1)*sin(w*x2)"), sx("exp(-a0*x1)*cos(w*x2)")]).unwrap(),
    ];
    for v in &spaces {
        let r = check_invariance(&heat, v).unwrap();
        assert!(r.invariant, "{v}");
        assert!(r.psi.iter().all(|p| p.kappa_degree() <= 1));
    }
}

#[test]
fn decoupled_reduction() {
    // A1 = d2/(3a0) u² + c1 u + c0, B1 = d2 u² + d1 u + d0, C = (a0 d1 − 2a0² c1) u² + k1 u
    let e = BTreeMap::new();
    let op = CRDOperator::new(
        upoly("d2/3*u^2 + c1*u + c0", &e).unwrap(),
        upoly("beta0", &e).unwrap(),
        upoly("d2*u^2 + d1*u + d0", &e).unwrap(),
        upoly("lambda0", &e).unwrap(),
        upoly("(d1 - 2*c1)*u^2 + k1*u", &e).unwrap(),
    );
    // a0 = 1 so the operator stays polynomial in its symbols
    let v = SubspaceBasis::custom(vec![sx("exp(-x1)"), sx("exp(-x1 - b1*x2)")]).unwrap();
    let sys = reduce_to_fode_system(&op, &v).unwrap();
    assert_eq!(sys.equations[0], kap("(c0 - d0 + k1)*K1"));
    assert_eq!(sys.equations[1], kap("(c0 + b1^2*beta0 - d0 - b1*lambda0 + k1)*K2"));
}

#[test]
fn polynomial_reduction() {
    let e = BTreeMap::new();
    let op = CRDOperator::new(
        upoly("c1*u + c0", &e).unwrap(),
        upoly("beta1*u + beta0", &e).unwrap(),
        upoly("d0", &e).unwrap(),
        upoly("lambda0", &e).unwrap(),
        upoly("k0", &e).unwrap(),
    );
    let v = build_type2(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    let sys = reduce_to_fode_system(&op, &v).unwrap();
    assert_eq!(
        sys.equations,
        vec![kap("c1*K2^2 + beta1*K3^2 + d0*K2 + lambda0*K3 + k0"), KPoly::zero(), KPoly::zero()]
    );

    let zero = reduce_to_fode_system(&CRDOperator::default(), &v).unwrap();
    assert!(zero.equations.iter().all(KPoly::is_zero));

    let v4 = build_type1(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    let err = reduce_to_fode_system(&example_operator(), &v4).unwrap_err();
    assert!(matches!(err, InvarianceError::NotInvariant { .. }));
}

const LISTED_EQUATIONS: [&str; 12] = [
    "6*a1*c2 - 2*d2",
    "6*b1*beta2 - 2*lambda2",
    "2*d2 - 2*a1*c2",
    "2*lambda2 - 10*b1*beta2",
    "2*d2 - 10*a1*c2",
    "8*a1^2*c2 - 4*a1*d2 + 6*k3",
    "4*a1^2*c1 - 2*a1*d1 + 2*k2",
    "8*b1^2*beta2 - 4*b1*lambda2 + 6*k3",
    "2*lambda2 - 2*b1*beta2",
    "4*b1^2*beta1 - 2*b1*lambda1 + 2*k2",
    "a1^2*c1 + b1^2*beta1 - a1*d1 - b1*lambda1 + 2*k2",
    "a1^2*c2 + b1^2*beta2 - a1*d2 - b1*lambda2 + 3*k3",
];

fn exp_type2() -> SubspaceBasis {
    build_type2(&rate_ode(Axis::X1, &["0", "a1"]), &rate_ode(Axis::X2, &["0", "b1"])).unwrap()
}

#[test]
fn cubic_determining_system() {
    let t = Instant::now();
    let ds = determining_system(&cubic_operator(), &exp_type2()).unwrap();
    let mut listed: Vec<KPoly> = LISTED_EQUATIONS.iter().map(|s| normalize_equation(&kpoly(s).unwrap())).collect();
    listed.sort();
    listed.dedup();
    let mut got = ds.equations.clone();
    got.sort();
    assert_eq!(got, listed, "\n{ds}");
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn determining_system_vanishes_on_solutions() {
    // quadratic parts off; c1 = −b1²β1/a1², a1d1 = 2a1²c1 + k2, b1λ1 = 2b1²β1 + k2
    let ds = determining_system(&cubic_operator(), &exp_type2()).unwrap();
    let mut vals: BTreeMap<String, Q> = BTreeMap::new();
    for (k, v) in
        [("c2", 0), ("d2", 0), ("lambda2", 0), ("beta2", 0), ("k3", 0), ("a1", 2), ("b1", 3), ("beta1", 1), ("k2", 1)]
    {
        vals.insert(k.into(), q(v));
    }
    vals.insert("c1".into(), qr(-9, 4));
    vals.insert("d1".into(), qr(-17, 2));
    vals.insert("lambda1".into(), qr(19, 3));
    for e in ds.eval_rational(&vals) {
        assert!(e.is_zero(), "{e}");
    }

    // polynomial limit: Table 3 style assignment on {1, x1, x2}
    let v = build_type2(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
    let ds = determining_system(&cubic_operator(), &v).unwrap();
    let mut vals: BTreeMap<String, Q> = BTreeMap::new();
    for k in ["d2", "lambda2", "k3", "k2"] {
        vals.insert(k.into(), q(0));
    }
    for e in ds.eval_rational(&vals) {
        assert!(e.is_zero(), "{e}");
    }

    let linear = CRDOperator::new(
        UPoly::symbolic("c", 0),
        UPoly::symbolic("beta", 0),
        UPoly::symbolic("d", 0),
        UPoly::symbolic("lambda", 0),
        UPoly::symbolic("k", 1),
    );
    assert!(determining_system(&linear, &exp_type2()).unwrap().is_empty());
}

#[test]
fn determining_routes_agree_on_zero_sets() {
    // both routes must vanish at the same concrete points
    let jets = determining_system(&cubic_operator(), &exp_type2()).unwrap();
    let span = span_determining_system(&cubic_operator(), &exp_type2()).unwrap();
    let mut vals: BTreeMap<String, Q> = BTreeMap::new();
    for (k, v) in [("c2", 1), ("a1", 1), ("b1", 1), ("beta2", 1), ("c1", 1), ("beta1", 1), ("k2", 1)] {
        vals.insert(k.into(), q(v));
    }
    vals.insert("d2".into(), q(3));
    vals.insert("lambda2".into(), q(3));
    vals.insert("k3".into(), qr(2, 3));
    vals.insert("d1".into(), q(3));
    vals.insert("lambda1".into(), q(3));
    let z1 = jets.eval_rational(&vals).iter().all(KPoly::is_zero);
    let z2 = span.eval_rational(&vals).iter().all(KPoly::is_zero);
    assert_eq!(z1, z2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symbolic_and_numeric_verdicts_agree(
        parts in prop::collection::vec(arb_upoly(2), 5),
        which in 0usize..4,
        seed in any::<u64>(),
    ) {
        let op = CRDOperator::new(
            rational_upoly(&parts[0]), rational_upoly(&parts[1]), rational_upoly(&parts[2]),
            rational_upoly(&parts[3]), rational_upoly(&parts[4]),
        );
        let v = match which {
            0 => build_type2(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap(),
            1 => build_type2(&ode(Axis::X1, &[0, 1]), &ode(Axis::X2, &[0, -2])).unwrap(),
            2 => build_type1(&ode(Axis::X1, &[1]), &ode(Axis::X2, &[0, 1])).unwrap(),
            _ => build_type1(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap(),
        };
        let r = check_invariance(&op, &v).unwrap();
        let p = numeric_invariance_probe(&op, &v, &Bindings::new(), seed).unwrap();
        prop_assert_eq!(r.invariant, p.invariant, "probe residual {}", p.relative_residual);
        if r.invariant {
            let u = v.generic_element();
            prop_assert_eq!(assemble(&r.psi, v.members()), apply_operator(&op, &u).unwrap());
        } else {
            prop_assert!(r.witness.is_some());
        }
    }

    #[test]
    fn verdict_survives_rescaling(
        parts in prop::collection::vec(arb_upoly(2), 5),
        scales in prop::collection::vec(prop_oneof![-4i64..=-1, 1i64..=4], 4),
    ) {
        let op = CRDOperator::new(
            rational_upoly(&parts[0]), rational_upoly(&parts[1]), rational_upoly(&parts[2]),
            rational_upoly(&parts[3]), rational_upoly(&parts[4]),
        );
        let v = build_type1(&ode(Axis::X1, &[0, 0]), &ode(Axis::X2, &[0, 0])).unwrap();
        let scaled: Vec<SymExpr> = v.members().iter().zip(&scales).map(|(m, s)| m.scale_q(&qr(*s, 3))).collect();
        let w = SubspaceBasis::custom(scaled).unwrap();
        prop_assert_eq!(check_invariance(&op, &v).unwrap().invariant, check_invariance(&op, &w).unwrap().invariant);
    }
}
