#include <doctest.h>

#include "interpeq/alignment.hpp"
#include "interpeq/model.hpp"
#include "interpeq/serialize.hpp"

#include <nlohmann/json.hpp>

using namespace interpeq;

namespace {

// U -> v1 = U + 1 -> v2 = 2 * v1
CausalModel make_chain() {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Hidden},
        {"v2", 1, VarKind::Output},
    };
    Mat one(1, 1);
    one << 1.0;
    Mat two(1, 1);
    two << 2.0;
    Vec b1(1);
    b1 << 1.0;
    std::vector<Transition> ts;
    ts.push_back({"v1", {"U"}, make_affine(one, b1)});
    ts.push_back({"v2", {"v1"}, make_affine(two, Vec::Zero(1))});
    return build_model(vars, "U", ts);
}

Task scalar_task(std::initializer_list<int> xs) {
    Task t;
    t.alphabet_size = 16;
    for (int x : xs) t.inputs.push_back({x});
    return t;
}

}  // namespace

TEST_CASE("trivial one-hidden-variable model solves through h") {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Output},
    };
    std::vector<Transition> ts;
    ts.push_back({"v1", {}, make_lambda([](const std::vector<const Vec*>&, const Vec& u) {
                      return u;  // h = identity
                  })});
    CausalModel m = build_model(vars, "U", ts);
    Vec u(1);
    u << 5.0;
    CHECK(m.solve(u).value("v1")[0] == 5.0);
}

TEST_CASE("chain model solves by hand-computed values") {
    CausalModel m = make_chain();
    Vec u(1);
    u << 3.0;
    Solution s = m.solve(u);
    CHECK(s.value("v1")[0] == 4.0);
    CHECK(s.value("v2")[0] == 8.0);
    CHECK(m.order() == std::vector<std::string>{"U", "v1", "v2"});
}

TEST_CASE("solving twice is bitwise identical") {
    CausalModel m = make_chain();
    Vec u(1);
    u << 7.25;
    Solution a = m.solve(u);
    Solution b = m.solve(u);
    for (const auto& id : m.order()) {
        REQUIRE(a.value(id).size() == b.value(id).size());
        for (Eigen::Index i = 0; i < a.value(id).size(); ++i)
            CHECK(std::memcmp(&a.value(id)[i], &b.value(id)[i], sizeof(double)) == 0);
    }
}

TEST_CASE("cycles are rejected") {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Hidden},
        {"v2", 1, VarKind::Output},
    };
    Mat w(1, 1);
    w << 1.0;
    std::vector<Transition> ts;
    ts.push_back({"v1", {"v2"}, make_affine(w, Vec::Zero(1))});
    ts.push_back({"v2", {"v1"}, make_affine(w, Vec::Zero(1))});
    CHECK_THROWS_AS(build_model(vars, "U", ts), CycleDetected);
}

TEST_CASE("transition validation errors") {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Output},
    };
    Mat w(1, 1);
    w << 1.0;
    SUBCASE("duplicate") {
        std::vector<Transition> ts;
        ts.push_back({"v1", {"U"}, make_affine(w, Vec::Zero(1))});
        ts.push_back({"v1", {"U"}, make_affine(w, Vec::Zero(1))});
        CHECK_THROWS_AS(build_model(vars, "U", ts), DuplicateTransition);
    }
    SUBCASE("missing") {
        CHECK_THROWS_AS(build_model(vars, "U", {}), MissingTransition);
    }
    SUBCASE("unknown parent") {
        std::vector<Transition> ts;
        ts.push_back({"v1", {"ghost"}, make_affine(w, Vec::Zero(1))});
        CHECK_THROWS_AS(build_model(vars, "U", ts), UnknownParentId);
    }
}

TEST_CASE("interventions") {
    CausalModel m = make_chain();
    Vec u(1);
    u << 3.0;

    SUBCASE("constant ablation propagates") {
        CausalModel done = apply_intervention(m, {"v1", {}, make_constant(Vec::Zero(1))});
        Solution s = done.solve(u);
        CHECK(s.value("v1")[0] == 0.0);
        CHECK(s.value("v2")[0] == 0.0);
        // original untouched
        CHECK(m.solve(u).value("v1")[0] == 4.0);
    }
    SUBCASE("identity intervention is a no-op") {
        const Transition* t = m.transition("v1");
        CausalModel done = apply_intervention(m, {"v1", t->parents, t->op});
        Solution a = m.solve(u);
        Solution b = done.solve(u);
        for (const auto& id : m.order()) CHECK(a.value(id) == b.value(id));
    }
    SUBCASE("order violation") {
        Mat w(1, 1);
        w << 1.0;
        CHECK_THROWS_AS(apply_intervention(m, {"v1", {"v2"}, make_affine(w, Vec::Zero(1))}),
                        OrderViolation);
    }
    SUBCASE("unknown target") {
        CHECK_THROWS_AS(apply_intervention(m, {"ghost", {}, make_constant(Vec::Zero(1))}),
                        UnknownTarget);
    }
}

TEST_CASE("intervention locality: non-descendants bitwise unchanged") {
    // U -> a -> out ; U -> b -> out (b not a descendant of a)
    std::vector<Variable> vars = {
        {"U", 2, VarKind::Input},
        {"a", 2, VarKind::Hidden},
        {"b", 2, VarKind::Hidden},
        {"o", 2, VarKind::Output},
    };
    Mat wa = Mat::Identity(2, 2) * 1.7;
    Mat wb = Mat::Identity(2, 2) * -0.3;
    Mat wo(2, 4);
    wo << 1, 0, 1, 0, 0, 1, 0, 1;
    std::vector<Transition> ts;
    ts.push_back({"a", {"U"}, make_affine(wa, Vec::Zero(2))});
    ts.push_back({"b", {"U"}, make_affine(wb, Vec::Zero(2))});
    ts.push_back({"o", {"a", "b"}, make_affine(wo, Vec::Zero(2))});
    CausalModel m = build_model(vars, "U", ts);

    Vec u(2);
    u << 0.123, -9.5;
    Solution base = m.solve(u);
    CausalModel done = apply_intervention(m, {"a", {}, make_constant(Vec::Ones(2))});
    Solution after = done.solve(u);
    CHECK(after.value("b") == base.value("b"));  // non-descendant unchanged
    CHECK(after.value("o") != base.value("o"));
}

TEST_CASE("model JSON round-trip is bit-exact") {
    CausalModel m = make_chain();
    auto j = model_to_json(m);
    CausalModel m2 = model_from_json(j);
    auto j2 = model_to_json(m2);
    CHECK(j.dump() == j2.dump());
    // parameter stored with full precision
    Mat w(1, 1);
    w << 0.1 + 0.2;  // not exactly representable as 0.3
    std::vector<Variable> vars = {{"U", 1, VarKind::Input}, {"v", 1, VarKind::Output}};
    std::vector<Transition> ts;
    ts.push_back({"v", {"U"}, make_affine(w, Vec::Zero(1))});
    CausalModel fine = build_model(vars, "U", ts);
    CausalModel fine2 = model_from_json(model_to_json(fine));
    CHECK(fine2.transition("v")->op->weight(0, 0) == w(0, 0));
}

TEST_CASE("lambda models refuse to serialize") {
    std::vector<Variable> vars = {{"U", 1, VarKind::Input}, {"v", 1, VarKind::Output}};
    std::vector<Transition> ts;
    ts.push_back({"v", {}, make_lambda([](const std::vector<const Vec*>&, const Vec& u) {
                      return u;
                  })});
    CausalModel m = build_model(vars, "U", ts);
    CHECK_THROWS_AS(model_to_json(m), UnsupportedOp);
}

TEST_CASE("check_circuit validates the four properties") {
    CausalModel m = make_chain();
    Task t = scalar_task({1, 2, 3});
    std::vector<Vec> refs;
    for (const auto& in : t.inputs) {
        Vec r(1);
        r << 2.0 * (in[0] + 1);
        refs.push_back(r);
    }
    t.reference_outputs = refs;
    CircuitReport r = check_circuit(m, t, 1e-9);
    CHECK(r.passed());
    CHECK(r.worst_deviation == 0.0);

    SUBCASE("output with a successor fails terminality") {
        // v2 (output) feeding another variable
        std::vector<Variable> vars = {
            {"U", 1, VarKind::Input},
            {"v2", 1, VarKind::Output},
            {"v3", 1, VarKind::Hidden},
        };
        Mat w(1, 1);
        w << 1.0;
        std::vector<Transition> ts;
        ts.push_back({"v2", {"U"}, make_affine(w, Vec::Zero(1))});
        ts.push_back({"v3", {"v2"}, make_affine(w, Vec::Zero(1))});
        CausalModel bad = build_model(vars, "U", ts);
        Task t2 = scalar_task({1});
        t2.reference_outputs = std::vector<Vec>{Vec::Ones(1)};
        CHECK_FALSE(check_circuit(bad, t2, 1e-9).output_terminal);
    }
}

TEST_CASE("identity abstraction passes with residual zero") {
    CausalModel m = make_chain();
    Task t = scalar_task({1, 2, 5});
    Alignment a = identity_alignment(m);
    auto suite = make_default_suite(m, t, 42);
    AbstractionReport r = check_abstraction(m, m, a, t, suite, 1e-12);
    CHECK(r.passed);
    CHECK(r.max_obs_residual == 0.0);
    CHECK(r.max_inter_residual == 0.0);
}

TEST_CASE("trivial interpretation alignment passes with output-only suite") {
    CausalModel m = make_chain();
    Task t = scalar_task({1, 2, 5});
    CausalModel triv = trivial_model_of(m);
    Alignment a = trivial_alignment(m, triv);
    std::vector<Intervention> suite = {{"v2", {}, make_constant(Vec::Ones(1))}};
    AbstractionReport r = check_abstraction(m, triv, a, t, suite, 1e-12);
    CHECK(r.passed);
    FaithfulnessBudget zero{0.0};
    CHECK(check_interpretation(m, triv, a, t, zero, suite, 1e-12));
}

TEST_CASE("merging variables with distinct roles fails interventional consistency") {
    // low: U -> a = U, b = 2U, o = a + b. high: U -> ab = (U, 2U) merged, o.
    // Merge {a,b} -> ab but intervene only on a; the high model cannot mirror it.
    std::vector<Variable> lv = {
        {"U", 1, VarKind::Input},
        {"a", 1, VarKind::Hidden},
        {"b", 1, VarKind::Hidden},
        {"o", 1, VarKind::Output},
    };
    Mat one(1, 1), two(1, 1), sum(1, 2);
    one << 1.0;
    two << 2.0;
    sum << 1.0, 1.0;
    std::vector<Transition> lts;
    lts.push_back({"a", {"U"}, make_affine(one, Vec::Zero(1))});
    lts.push_back({"b", {"U"}, make_affine(two, Vec::Zero(1))});
    lts.push_back({"o", {"a", "b"}, make_affine(sum, Vec::Zero(1))});
    CausalModel low = build_model(lv, "U", lts);

    std::vector<Variable> hv = {
        {"U", 1, VarKind::Input},
        {"ab", 2, VarKind::Hidden},
        {"o", 1, VarKind::Output},
    };
    Mat stack(2, 1);
    stack << 1.0, 2.0;
    std::vector<Transition> hts;
    hts.push_back({"ab", {"U"}, make_affine(stack, Vec::Zero(2))});
    hts.push_back({"o", {"ab"}, make_affine(sum, Vec::Zero(1))});
    CausalModel high = build_model(hv, "U", hts);

    Alignment a;
    AlignmentEntry merged;
    merged.high_id = "ab";
    merged.low_ids = {"a", "b"};
    merged.value_fn = [](const std::vector<const Vec*>& vals) {
        Vec v(2);
        v << (*vals[0])[0], (*vals[1])[0];
        return v;
    };
    AlignmentEntry out;
    out.high_id = "o";
    out.low_ids = {"o"};
    out.value_fn = [](const std::vector<const Vec*>& vals) { return *vals[0]; };
    a.entries = {merged, out};
    // omega maps every low intervention to "no change" on the high model,
    // which is exactly what a one-sided perturbation of a merged pair breaks.
    a.intervention_map = [&high](const Intervention& iv) -> std::optional<Intervention> {
        if (iv.target == "o") return iv;
        const Transition* t = high.transition("ab");
        return Intervention{"ab", t->parents, t->op};
    };

    Task t = scalar_task({1, 3});
    AbstractionReport obs_only = check_abstraction(low, high, a, t, {}, 1e-12);
    CHECK(obs_only.passed);  // observationally fine

    std::vector<Intervention> suite = {{"a", {}, make_constant(Vec::Zero(1))}};
    AbstractionReport r = check_abstraction(low, high, a, t, suite, 1e-12);
    CHECK_FALSE(r.passed);
    CHECK(r.max_inter_residual > 0.5);
}

TEST_CASE("interpretation budget is enforced") {
    CausalModel m = make_chain();
    Task t = scalar_task({1, 2});
    // high model identical except output off by 0.5
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Hidden},
        {"v2", 1, VarKind::Output},
    };
    Mat one(1, 1), two(1, 1);
    one << 1.0;
    two << 2.0;
    Vec b1(1), b2(1);
    b1 << 1.0;
    b2 << 0.5;
    std::vector<Transition> ts;
    ts.push_back({"v1", {"U"}, make_affine(one, b1)});
    ts.push_back({"v2", {"v1"}, make_affine(two, b2)});
    CausalModel shifted = build_model(vars, "U", ts);

    Alignment a = identity_alignment(m);
    CHECK_FALSE(check_interpretation(m, shifted, a, t, FaithfulnessBudget{0.25}, {}, 1e-12));
    CHECK(check_interpretation(m, shifted, a, t, FaithfulnessBudget{0.75}, {}, 0.51));
}

TEST_CASE("compose_alignments: identity o identity = identity; domain mismatch throws") {
    CausalModel m = make_chain();
    Alignment id = identity_alignment(m);
    Alignment comp = compose_alignments(id, id);
    Task t = scalar_task({2, 4});
    AbstractionReport r = check_abstraction(m, m, comp, t, make_default_suite(m, t, 1), 1e-12);
    CHECK(r.passed);

    Alignment bogus;
    AlignmentEntry e;
    e.high_id = "z";
    e.low_ids = {"nope"};
    e.value_fn = [](const std::vector<const Vec*>& v) { return *v[0]; };
    bogus.entries = {e};
    CHECK_THROWS_AS(compose_alignments(bogus, id), DomainMismatch);
}

TEST_CASE("abstraction composition: chain of two verified abstractions composes") {
    // low: U -> a=U+1 -> b=2a -> o=b+0 ; mid merges nothing (identity-like but
    // drops a); high is the trivial model. compose(low->mid, mid->high).
    CausalModel low = make_chain();
    CausalModel triv = trivial_model_of(low);
    Alignment a13 = compose_alignments(identity_alignment(low), trivial_alignment(low, triv));
    Task t = scalar_task({1, 2, 3});
    std::vector<Intervention> suite = {{"v2", {}, make_constant(Vec::Ones(1))}};
    AbstractionReport r = check_abstraction(low, triv, a13, t, suite, 1e-12);
    CHECK(r.passed);
}
