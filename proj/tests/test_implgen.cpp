#include <doctest.h>

#include <filesystem>
#include <set>

#include <nlohmann/json.hpp>

#include "interpeq/implgen.hpp"
#include "interpeq/rasp_compile.hpp"
#include "interpeq/serialize.hpp"

using namespace interpeq;
using namespace interpeq::rasp;

namespace {

// U -> v1 = 2*U (output); dead = 3*U has no path to the output.
CausalModel with_dead_var() {
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"dead", 1, VarKind::Hidden},
        {"v1", 1, VarKind::Output},
    };
    Mat two(1, 1), three(1, 1);
    two << 2.0;
    three << 3.0;
    std::vector<Transition> ts;
    ts.push_back({"dead", {"U"}, make_affine(three, Vec::Zero(1))});
    ts.push_back({"v1", {"U"}, make_affine(two, Vec::Zero(1))});
    return build_model(vars, "U", ts);
}

Task small_task() {
    Task t;
    t.alphabet_size = 9;
    t.inputs = {{1}, {2}, {3}, {5}};
    return t;
}

}  // namespace

TEST_CASE("score_components: sole causal path scores 1, dead variable scores 0") {
    CausalModel m = with_dead_var();
    Task t = small_task();
    auto scores = score_components(m, t, StrategyKind::ConstantAblate);
    double dead_score = -1, out_score = -1;
    for (const auto& s : scores) {
        if (s.id == "dead") dead_score = s.importance;
        if (s.id == "v1") out_score = s.importance;
    }
    CHECK(dead_score == 0.0);
    CHECK(out_score == 1.0);
    CHECK_THROWS_AS(score_components(m, Task{}, StrategyKind::ConstantAblate), EmptyTask);
}

TEST_CASE("score monotonicity: raising the threshold never shrinks the unimportant set") {
    const int n = 3;
    Program p = parse_program(builtin_source(1, n));
    CompiledTransformer ct = compile(p, CompileConfig{n, n, 0, 0, 4, 3});
    Task task = permutation_task_exhaustive(n);
    auto scores = score_components(ct.model, task, StrategyKind::ConstantAblate);
    auto unimportant_at = [&](double thr) {
        std::set<std::string> s;
        for (const auto& c : scores)
            if (c.importance < thr) s.insert(c.id);
        return s;
    };
    auto lo = unimportant_at(0.01), mid = unimportant_at(0.1), hi = unimportant_at(0.9);
    CHECK(std::includes(mid.begin(), mid.end(), lo.begin(), lo.end()));
    CHECK(std::includes(hi.begin(), hi.end(), mid.begin(), mid.end()));
}

TEST_CASE("sample_variant basics") {
    CausalModel m = with_dead_var();
    Task t = small_task();
    SUBCASE("constant-ablate on a dead variable keeps outputs bitwise equal") {
        VariantStrategy st{StrategyKind::ConstantAblate, 0.0, 5};
        CausalModel v = sample_variant(m, {"dead"}, st, {}, &t);
        for (std::size_t i = 0; i < t.inputs.size(); ++i)
            CHECK(v.solve(t.input_vector(i)).output() ==
                  m.solve(t.input_vector(i)).output());
    }
    SUBCASE("gaussian magnitude 0 is solution-equal to base") {
        VariantStrategy st{StrategyKind::GaussianPerturb, 0.0, 5};
        CausalModel v = sample_variant(m, {"dead"}, st, {}, &t);
        for (std::size_t i = 0; i < t.inputs.size(); ++i)
            for (const auto& id : m.order())
                CHECK(v.solve(t.input_vector(i)).value(id) ==
                      m.solve(t.input_vector(i)).value(id));
    }
    SUBCASE("dead insert adds variables without changing outputs") {
        VariantStrategy st{StrategyKind::DeadComponentInsert, 3.0, 9};
        CausalModel v = sample_variant(m, {"dead"}, st, {}, &t);
        CHECK(v.size() == m.size() + 3);
        for (std::size_t i = 0; i < t.inputs.size(); ++i)
            CHECK(v.solve(t.input_vector(i)).output() ==
                  m.solve(t.input_vector(i)).output());
        Task ref = t;
        std::vector<Vec> refs;
        for (std::size_t i = 0; i < t.inputs.size(); ++i)
            refs.push_back(m.solve(t.input_vector(i)).output());
        ref.reference_outputs = refs;
        CHECK(check_circuit(v, ref, 1e-9).passed());
    }
    SUBCASE("targets naming input or output are rejected") {
        VariantStrategy st{StrategyKind::ConstantAblate, 0.0, 5};
        CHECK_THROWS_AS(sample_variant(m, {"v1"}, st, {}, &t), TargetIsOutput);
        CHECK_THROWS_AS(sample_variant(m, {"U"}, st, {}, &t), TargetIsInput);
    }
}

TEST_CASE("unused-subspace rotation changes pads but never the outputs") {
    const int n = 3;
    Program p = parse_program(builtin_source(5, n));
    CompiledTransformer ct = compile(p, CompileConfig{n, n, 0, 0, 6, 21});
    Task task = permutation_task_exhaustive(n);
    std::vector<RotatableBlock> blocks;
    for (const auto& b : ct.pad_blocks) blocks.push_back({b.variable, b.offset, b.width});
    VariantStrategy st{StrategyKind::UnusedSubspaceRotate, 1.0, 77};
    CausalModel v = sample_variant(ct.model, {}, st, blocks, &task);

    bool pad_changed = false;
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        Solution a = ct.model.solve(task.input_vector(i));
        Solution b = v.solve(task.input_vector(i));
        CHECK(a.output() == b.output());
        for (const auto& blk : blocks)
            if (a.value(blk.variable) != b.value(blk.variable)) pad_changed = true;
    }
    CHECK(pad_changed);
}

TEST_CASE("verify_preservation: base passes, important ablation fails") {
    const int n = 3;
    Program p = parse_program(builtin_source(6, n));
    CompiledTransformer ct = compile(p, CompileConfig{n, n, 0, 0, 4, 5});
    Task task = permutation_task_exhaustive(n);
    auto scores = score_components(ct.model, task, StrategyKind::ConstantAblate);
    std::vector<std::string> important;
    for (const auto& s : scores)
        if (s.importance >= 0.02 && s.id != ct.model.output_id()) important.push_back(s.id);
    REQUIRE(!important.empty());

    PreservationReport same =
        verify_preservation(ct.model, ct.model, task, FaithfulnessBudget{1e-6}, important, 3, 3);
    CHECK(same.passed);
    CHECK(same.output_residual == 0.0);

    // zero out the most important component
    std::string worst;
    double worst_score = -1;
    for (const auto& s : scores) {
        if (s.id != ct.model.output_id() && s.importance > worst_score) {
            worst_score = s.importance;
            worst = s.id;
        }
    }
    const auto& var = ct.model.variable(worst);
    CausalModel broken =
        ct.model.with_intervention({worst, {}, make_constant(Vec::Zero(var.arity))});
    PreservationReport bad =
        verify_preservation(ct.model, broken, task, FaithfulnessBudget{1e-6}, important, 3, 3);
    CHECK_FALSE(bad.passed);
    CHECK(bad.output_residual > 0.5);
}

TEST_CASE("generate_implementations: reproducible, verified, persistent") {
    const int n = 3;
    Program p = parse_program(builtin_source(1, n));
    CompiledTransformer ct = compile(p, CompileConfig{n, n, 0, 0, 6, 13});
    Task task = permutation_task_exhaustive(n);

    GeneratorConfig cfg;
    cfg.strategies = {{StrategyKind::UnusedSubspaceRotate, 1.0, 0},
                      {StrategyKind::GaussianPerturb, 0.05, 0}};
    for (const auto& b : ct.pad_blocks) cfg.rotatable.push_back({b.variable, b.offset, b.width});
    cfg.budget.eta = 1e-6;

    ImplementationSet set = generate_implementations(ct.model, task, 6, cfg, 99);
    CHECK(set.variants.size() == 6);
    for (std::size_t i = 0; i < set.variants.size(); ++i) {
        PreservationReport pr = verify_preservation(ct.model, set.variants[i], task, cfg.budget,
                                                    {}, set.provenance[i].seed, 0);
        CHECK(pr.passed);
    }

    // seed determinism: serialized sets identical
    ImplementationSet again = generate_implementations(ct.model, task, 6, cfg, 99);
    for (std::size_t i = 0; i < set.variants.size(); ++i)
        CHECK(model_to_json(set.variants[i]).dump() == model_to_json(again.variants[i]).dump());

    // pairwise weight-distinct
    std::set<std::string> dumps;
    for (const auto& v : set.variants) dumps.insert(model_to_json(v).dump());
    CHECK(dumps.size() == set.variants.size());

    // persistence round-trip
    const std::string dir = "test_impl_set";
    save_implementation_set(set, dir);
    ImplementationSet loaded = load_implementation_set(dir);
    REQUIRE(loaded.variants.size() == set.variants.size());
    for (std::size_t i = 0; i < set.variants.size(); ++i)
        CHECK(model_to_json(loaded.variants[i]).dump() == model_to_json(set.variants[i]).dump());
    std::filesystem::remove_all(dir);
}

TEST_CASE("generate_implementations: saturated model raises NoUnimportantComponents") {
    // every hidden variable is the sole causal path
    std::vector<Variable> vars = {
        {"U", 1, VarKind::Input},
        {"v1", 1, VarKind::Hidden},
        {"v2", 1, VarKind::Output},
    };
    Mat one(1, 1);
    one << 1.0;
    std::vector<Transition> ts;
    ts.push_back({"v1", {"U"}, make_affine(one, Vec::Zero(1))});
    ts.push_back({"v2", {"v1"}, make_affine(one, Vec::Zero(1))});
    CausalModel m = build_model(vars, "U", ts);
    Task t = small_task();
    GeneratorConfig cfg;
    cfg.strategies = {{StrategyKind::GaussianPerturb, 0.1, 0}};
    CHECK_THROWS_AS(generate_implementations(m, t, 1, cfg, 1), NoUnimportantComponents);
}

TEST_CASE("budget exhaustion is reported") {
    CausalModel m = with_dead_var();
    Task t = small_task();
    GeneratorConfig cfg;
    // rotation requires rotatable blocks; none exist here, so every attempt
    // fails and the retry budget runs out
    cfg.strategies = {{StrategyKind::UnusedSubspaceRotate, 1.0, 0}};
    cfg.retry_cap = 5;
    CHECK_THROWS_AS(generate_implementations(m, t, 1, cfg, 1), BudgetExhausted);
}
