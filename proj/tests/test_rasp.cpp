#include <doctest.h>

#include <set>

#include "interpeq/rasp.hpp"

using namespace interpeq;
using namespace interpeq::rasp;

TEST_CASE("primitives and elementwise composition") {
    // tokens/indices over a 4-token sequence (numeric alphabet)
    Program p = parse_program("out = tokens\n");
    CHECK(interpret(p, {3, 1, 4, 2}, 4) == std::vector<double>{3, 1, 4, 2});

    Program idx = parse_program("out = indices\n");
    CHECK(interpret(idx, {3, 1, 4, 2}, 4) == std::vector<double>{0, 1, 2, 3});

    Program scaled = parse_program("out = 3 * indices\n");
    CHECK(interpret(scaled, {3, 1, 4, 2}, 4) == std::vector<double>{0, 3, 6, 9});
}

TEST_CASE("aggregate averages over selected keys, zero when none") {
    // Reconstructs the reference example: rows select {0}, {}, {0,1} over
    // values [10,20,30] -> [10, 0, 15]. Values are scaled tokens.
    const std::string src =
        "vals = tokens * 10\n"
        "out = aggregate(select(indices, indices, (q == 0 and k == 0) or (q == 2 and k <= 1)), vals)\n";
    Program p = parse_program(src);
    CHECK(interpret(p, {1, 2, 3}, 3) == std::vector<double>{10, 0, 15});
}

TEST_CASE("gather demands exclusive selection") {
    Program p = parse_program("out = gather(select(indices, indices, k <= q), tokens)\n");
    CHECK_THROWS_AS(interpret(p, {1, 2, 3}, 3), EvaluatorFailure);
}

TEST_CASE("width counts selected keys") {
    Program p = parse_program("out = width(select(tokens, tokens, k == q))\n");
    CHECK(interpret(p, {2, 1, 2}, 2) == std::vector<double>{2, 1, 2});
}

TEST_CASE("parse errors carry position and category") {
    CHECK_THROWS_AS(parse_program("out = select(tokens, tokens, k + q)\n"), TypeMismatch);
    CHECK_THROWS_AS(parse_program("out = nonesuch\n"), UnknownPrimitive);
    CHECK_THROWS_AS(parse_program("out = aggregate(tokens, tokens)\n"), TypeMismatch);
    CHECK_THROWS_AS(parse_program("x = tokens\n"), SyntaxError);        // no out
    CHECK_THROWS_AS(parse_program("out = (tokens\n"), SyntaxError);     // unbalanced
    CHECK_THROWS_AS(parse_program("out = tokens\nout = tokens\n"), SyntaxError);  // redefinition
}

TEST_CASE("alphabet violations are rejected") {
    Program p = parse_program("out = tokens\n");
    CHECK_THROWS_AS(interpret(p, {1, 7, 2}, 5), AlphabetViolation);
}

TEST_CASE("builtin interpretation sources parse to multi-sop programs") {
    for (int i = 1; i <= 6; ++i) {
        Program p = parse_program(builtin_source(i, 5));
        CHECK(p.output >= 0);
        CHECK(p.named.size() >= 3);
    }
    CHECK_THROWS_AS(builtin_source(1, 2), ConfigError);
    CHECK_THROWS_AS(builtin_source(1, 11), ConfigError);
}

TEST_CASE("paper anchor cases: [3,1,2] -> True, [1,2,2] -> False for every builtin") {
    auto programs = builtin_interpretations(3);
    for (const auto& p : programs) {
        CHECK(interpret(p, {3, 1, 2}, 3).back() == 1.0);
        CHECK(interpret(p, {1, 2, 2}, 3).back() == 0.0);
    }
}

TEST_CASE("all six builtins agree with the multiset oracle exhaustively at n=3,4") {
    for (int n : {3, 4}) {
        auto programs = builtin_interpretations(n);
        std::vector<int> seq(static_cast<std::size_t>(n), 1);
        while (true) {
            const bool truth = is_permutation(seq, n);
            for (std::size_t i = 0; i < programs.size(); ++i) {
                const double got = interpret(programs[i], seq, n).back();
                if ((got == 1.0) != truth) {
                    CAPTURE(i);
                    CAPTURE(n);
                    FAIL_CHECK("interpretation ", i + 1, " disagrees with oracle");
                }
            }
            int k = n - 1;
            while (k >= 0 && seq[static_cast<std::size_t>(k)] == n) {
                seq[static_cast<std::size_t>(k)] = 1;
                --k;
            }
            if (k < 0) break;
            ++seq[static_cast<std::size_t>(k)];
        }
    }
}

TEST_CASE("abstract model mirrors the interpreter and supports s-op patches") {
    const int n = 4;
    Program p = parse_program(builtin_source(1, n));
    CausalModel m = abstract_model(p, n, n);
    Vec u(4);
    u << 2, 2, 3, 1;
    Solution s = m.solve(u);
    Evaluation ev = evaluate(p, {2, 2, 3, 1}, n);
    const auto& sorted_vals = ev.sop_values[static_cast<std::size_t>(p.named.at("sorted"))];
    for (int i = 0; i < n; ++i)
        CHECK(s.value("sorted")[i] == sorted_vals[static_cast<std::size_t>(i)]);
    CHECK(s.output()[0] == 1.0);  // not a permutation -> [1,0,..]

    // Patch the sorted sequence to the identity permutation: out flips.
    Vec patched(4);
    patched << 1, 2, 3, 4;
    CausalModel done = apply_intervention(m, {"sorted", {}, make_constant(patched)});
    Solution s2 = done.solve(u);
    CHECK(s2.output()[1] == 1.0);
}

TEST_CASE("evaluate_sop_with_fixed recomputes only downstream of the patch") {
    const int n = 3;
    Program p = parse_program(builtin_source(5, n));
    const int anydup = p.named.at("anydup");
    std::map<int, std::vector<double>> fixed;
    fixed[anydup] = {0.0, 0.0, 0.0};  // pretend no duplicates
    const auto out = evaluate_sop_with_fixed(p, p.output, fixed, {1, 1, 2}, n);
    CHECK(out.back() == 1.0);  // duplicate hidden by the patch
}
