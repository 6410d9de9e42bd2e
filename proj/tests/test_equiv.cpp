#include <doctest.h>

#include <cmath>

#include "interpeq/equiv.hpp"
#include "interpeq/rng.hpp"

using namespace interpeq;

namespace {

// 1-D constant-output family: out = c regardless of input.
CausalModel constant_model(double c) {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"out", 1, VarKind::Output},
    };
    Vec v(1);
    v << c;
    std::vector<Transition> ts;
    ts.push_back({"out", {}, make_constant(v)});
    return build_model(vars, "U", ts);
}

Task one_input_task() {
    Task t;
    t.alphabet_size = 3;
    t.inputs = {{1}};
    return t;
}

// Independent brute-force oracles (same arithmetic, separate code path).
double hausdorff_oracle(const std::vector<const CausalModel*>& a,
                        const std::vector<const CausalModel*>& b, const DistillationMap& phi,
                        const Task& task) {
    double worst = 0.0;
    for (const auto* x : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto* y : b) best = std::min(best, impl_distance(*x, *y, phi, task));
        worst = std::max(worst, best);
    }
    for (const auto* y : b) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto* x : a) best = std::min(best, impl_distance(*x, *y, phi, task));
        worst = std::max(worst, best);
    }
    return worst;
}

double diameter_oracle(const std::vector<const CausalModel*>& set, const DistillationMap& phi,
                       const Task& task) {
    double worst = 0.0;
    for (const auto* x : set)
        for (const auto* y : set) worst = std::max(worst, impl_distance(*x, *y, phi, task));
    return worst;
}

}  // namespace

TEST_CASE("impl_distance: identity, phi-blindness, hand arithmetic") {
    Task t = one_input_task();
    CausalModel a = constant_model(1.0);
    DistillationMap phi = output_distillation(a);
    CHECK(impl_distance(a, a, phi, t) == 0.0);

    // two-variable toy: out = c, extra = d; phi ignores `extra`
    auto two_var = [&](double c, double d) {
        std::vector<Variable> vars = {
            {"U", 1, VarKind::Input},
            {"extra", 1, VarKind::Hidden},
            {"out", 1, VarKind::Output},
        };
        Vec vc(1), vd(1);
        vc << c;
        vd << d;
        std::vector<Transition> ts;
        ts.push_back({"extra", {}, make_constant(vd)});
        ts.push_back({"out", {}, make_constant(vc)});
        return build_model(vars, "U", ts);
    };
    CausalModel f1 = two_var(2.0, 7.0);
    CausalModel f2 = two_var(2.0, -3.0);  // differs only in the ignored variable
    CHECK(impl_distance(f1, f2, phi, t) == 0.0);

    CausalModel f3 = two_var(4.5, 0.0);
    CHECK(impl_distance(f1, f3, phi, t) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("hausdorff on 1-D constant families") {
    Task t = one_input_task();
    CausalModel zero = constant_model(0.0), one = constant_model(1.0);
    CausalModel three = constant_model(3.0), five = constant_model(5.0);
    DistillationMap phi = output_distillation(zero);

    CHECK(hausdorff_distance({&zero, &one}, {&zero, &one}, phi, t) == 0.0);
    CHECK(hausdorff_distance({&zero}, {&three}, phi, t) == 3.0);
    // A = {0, 1}, B = {0, 5}: sup-inf from A = 1, from B = 4
    CHECK(hausdorff_distance({&zero, &one}, {&zero, &five}, phi, t) == 4.0);
    CHECK_THROWS_AS(hausdorff_distance({}, {&zero}, phi, t), EmptySet);
}

TEST_CASE("compression and empirical diameter") {
    Task t = one_input_task();
    CausalModel zero = constant_model(0.0), one = constant_model(1.0), five = constant_model(5.0);
    DistillationMap phi = output_distillation(zero);

    CHECK(compression({&zero}, phi, t) == 0.0);  // singleton
    CausalModel two = constant_model(2.0);
    CHECK(compression({&zero, &two}, phi, t) == 2.0);
    CHECK(empirical_diameter({&zero, &one}, phi, t) == 1.0);
    CHECK(empirical_diameter({&zero, &one}, phi, t) <=
          compression({&zero, &one, &five}, phi, t));
    CHECK_THROWS_AS(empirical_diameter({&zero}, phi, t), InsufficientSamples);
}

TEST_CASE("set metrics match independent brute-force oracles bitwise") {
    Task t = one_input_task();
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<CausalModel> owned_a, owned_b;
        const int na = 2 + static_cast<int>(rng.next_below(6));
        const int nb = 2 + static_cast<int>(rng.next_below(6));
        for (int i = 0; i < na; ++i) owned_a.push_back(constant_model(rng.next_gaussian() * 5));
        for (int i = 0; i < nb; ++i) owned_b.push_back(constant_model(rng.next_gaussian() * 5));
        std::vector<const CausalModel*> a, b;
        for (const auto& m : owned_a) a.push_back(&m);
        for (const auto& m : owned_b) b.push_back(&m);
        DistillationMap phi = output_distillation(owned_a[0]);
        CHECK(hausdorff_distance(a, b, phi, t) == hausdorff_oracle(a, b, phi, t));
        CHECK(compression(a, phi, t) == diameter_oracle(a, phi, t));
        CHECK(empirical_diameter(a, phi, t) == diameter_oracle(a, phi, t));
    }
}

TEST_CASE("monotonicity: adding points grows diameters, shrinks Hausdorff to supersets") {
    Task t = one_input_task();
    Rng rng(43);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<CausalModel> owned;
        for (int i = 0; i < 6; ++i) owned.push_back(constant_model(rng.next_gaussian() * 3));
        std::vector<const CausalModel*> base, extended, extra;
        for (int i = 0; i < 4; ++i) base.push_back(&owned[static_cast<std::size_t>(i)]);
        extended = base;
        for (int i = 4; i < 6; ++i) {
            extended.push_back(&owned[static_cast<std::size_t>(i)]);
            extra.push_back(&owned[static_cast<std::size_t>(i)]);
        }
        DistillationMap phi = output_distillation(owned[0]);
        CHECK(compression(extended, phi, t) >= compression(base, phi, t));
        CHECK(hausdorff_distance(base, extended, phi, t) <=
              hausdorff_distance(base, extra, phi, t));
    }
}

TEST_CASE("Hausdorff is bounded by diam(A) + diam(B) + d(a,b) for any witnesses") {
    Task t = one_input_task();
    Rng rng(44);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<CausalModel> owned_a, owned_b;
        for (int i = 0; i < 5; ++i) owned_a.push_back(constant_model(rng.next_gaussian() * 4));
        for (int i = 0; i < 5; ++i) owned_b.push_back(constant_model(rng.next_gaussian() * 4));
        std::vector<const CausalModel*> a, b;
        for (const auto& m : owned_a) a.push_back(&m);
        for (const auto& m : owned_b) b.push_back(&m);
        DistillationMap phi = output_distillation(owned_a[0]);
        const std::size_t wa = rng.next_below(a.size());
        const std::size_t wb = rng.next_below(b.size());
        CHECK(hausdorff_distance(a, b, phi, t) <=
              compression(a, phi, t) + compression(b, phi, t) +
                  impl_distance(*a[wa], *b[wb], phi, t) + 1e-15);
    }
}

TEST_CASE("sample_size_bound: frozen values and property checks") {
    CHECK(sample_size_bound(1.0, 1.0, 0.5) == 1);
    CHECK(sample_size_bound(10.0, 0.1, 0.05) == 53);
    CHECK(sample_size_bound(1.0, 1.0, 0.999999) >= 1);  // documented floor
    CHECK_THROWS_AS(sample_size_bound(0.5, 0.1, 0.1), DomainError);
    CHECK_THROWS_AS(sample_size_bound(2.0, 0.0, 0.1), DomainError);
    CHECK_THROWS_AS(sample_size_bound(2.0, 0.1, 1.5), DomainError);

    Rng rng(45);
    for (int trial = 0; trial < 50; ++trial) {
        const double c = 1.0 + rng.next_double() * 50;
        const double p = 0.05 + rng.next_double() * 0.9;
        const double d = 0.01 + rng.next_double() * 0.9;
        const int m = sample_size_bound(c, p, d);
        CHECK(sample_size_bound(c + 5.0, p, d) >= m);            // nondecreasing in C
        CHECK(sample_size_bound(c, std::min(1.0, p + 0.05), d) <= m);  // nonincreasing in p
        CHECK(sample_size_bound(c, p, std::min(0.99, d + 0.05)) <= m); // nonincreasing in delta
    }
}

TEST_CASE("greedy covering returns sane ball structure") {
    // five points on a line: 0, 1, 2, 10, 11
    Mat pts(5, 5);
    const double xs[5] = {0, 1, 2, 10, 11};
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) pts(i, j) = std::abs(xs[i] - xs[j]);
    CoveringEstimate est = greedy_covering(pts, 2.0);
    CHECK(est.covering_number == 2);
    CHECK(est.p_min == doctest::Approx(0.4));
}

TEST_CASE("theorem checks on identical and separated synthetic sets") {
    Task t = one_input_task();

    auto make_set = [&](std::initializer_list<double> cs) {
        ImplementationSet set;
        auto it = cs.begin();
        set.base = constant_model(*it++);
        for (; it != cs.end(); ++it) set.variants.push_back(constant_model(*it));
        return set;
    };
    RhoSpec rho{{{"out"}}};

    SUBCASE("singleton identical sets: thm1 trivially holds") {
        ImplementationSet s1 = make_set({1.0});
        ImplementationSet s2 = make_set({1.0});
        TheoremInputs in;
        in.set1 = &s1;
        in.set2 = &s2;
        in.rho1 = rho;
        in.rho2 = rho;
        in.phi = output_distillation(s1.base);
        in.task = &t;
        BoundReport r1 = check_thm1(in);
        CHECK(r1.holds);
        CHECK(r1.lhs == 0.0);
        BoundReport r2 = check_thm2(in);
        CHECK(r2.holds);
        BoundReport r3 = check_thm3(in);
        CHECK(r3.holds);
    }

    SUBCASE("clustered sets: all three bounds hold with informative terms") {
        ImplementationSet s1 = make_set({0.0, 0.1, -0.1, 0.05, -0.05});
        ImplementationSet s2 = make_set({8.0, 8.1, 7.9, 8.05, 7.95});
        TheoremInputs in;
        in.set1 = &s1;
        in.set2 = &s2;
        in.rho1 = rho;
        in.rho2 = rho;
        in.phi = output_distillation(s1.base);
        in.task = &t;
        in.omega_cap = 1e-9;

        BoundReport r1 = check_thm1(in);
        CHECK(r1.holds);
        CHECK(r1.terms.at("d_interp") == doctest::Approx(8.0).epsilon(0.05));

        BoundReport r2 = check_thm2(in);
        CHECK(r2.holds);

        BoundReport r3 = check_thm3(in);
        CHECK(r3.holds);
        // well-separated clusters vote 1 almost always
        CHECK(r3.terms.at("p_hat") >= 0.95);

        CorollaryEnvelope env = corollary_envelope(in);
        CHECK(env.holds);
    }
}

TEST_CASE("missing bundle pieces raise MissingTerm") {
    TheoremInputs in;
    CHECK_THROWS_AS(check_thm1(in), MissingTerm);
}
