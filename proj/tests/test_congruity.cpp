#include <doctest.h>

#include <cmath>

#include "interpeq/congruity.hpp"
#include "interpeq/rng.hpp"

using namespace interpeq;

namespace {

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.next_gaussian();
    return m;
}

ReprMatrix single_block(Mat m) {
    ReprMatrix r;
    r.blocks.push_back(std::move(m));
    return r;
}

CausalModel linear_model(const Mat& w) {
    std::vector<Variable> vars = {
        {"U", static_cast<int>(w.cols()), VarKind::Input},
        {"out", static_cast<int>(w.rows()), VarKind::Output},
    };
    std::vector<Transition> ts;
    ts.push_back({"out", {"U"}, make_affine(w, Vec::Zero(w.rows()))});
    return build_model(vars, "U", ts);
}

Task random_task(int count, int length, int alphabet, std::uint64_t seed) {
    Task t;
    t.alphabet_size = alphabet;
    Rng rng(seed);
    while (static_cast<int>(t.inputs.size()) < count) {
        std::vector<int> seq(static_cast<std::size_t>(length));
        for (auto& v : seq) v = 1 + static_cast<int>(rng.next_below(alphabet));
        if (std::find(t.inputs.begin(), t.inputs.end(), seq) == t.inputs.end())
            t.inputs.push_back(std::move(seq));
    }
    return t;
}

// Family: out = (W_center + jitter) * u. Same center => same distribution.
VariantSampler gaussian_family(const Mat& center1, const Mat& center2, double jitter) {
    return [center1, center2, jitter](int side, int, Rng& rng) {
        const Mat& c = side == 1 ? center1 : center2;
        Mat w = c;
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] += jitter * rng.next_gaussian();
        return linear_model(w);
    };
}

}  // namespace

TEST_CASE("repr_dist_vote basics") {
    Rng rng(21);
    ReprMatrix r1 = single_block(random_matrix(20, 4, rng));
    ReprMatrix far = single_block(random_matrix(20, 4, rng, 10.0));
    CHECK(repr_dist_vote(r1, r1, far) == 1);   // zero self-distance
    CHECK(repr_dist_vote(r1, far, r1) == 0);   // r3 = r1, r2 far
    CHECK(repr_dist_vote(r1, far, far) == 1);  // exact tie votes 1
}

TEST_CASE("degenerate identity variants give score 0 with a warning flag") {
    Rng rng(22);
    Mat w = random_matrix(3, 4, rng);
    CausalModel m = linear_model(w);
    Task t = random_task(16, 4, 9, 23);
    CongruityConfig cfg;
    cfg.n_rounds = 20;
    cfg.seed = 5;
    RhoSpec rho{{{"out"}}};
    auto identity_sampler = [&](int side, int, Rng&) {
        (void)side;
        return m;
    };
    CongruityReport r = congruity(m, m, t, cfg, identity_sampler, rho, rho);
    CHECK(r.score == 0.0);
    CHECK(r.p1_hat == 1.0);
    CHECK(r.p2_hat == 1.0);
    CHECK(r.degenerate_variants);
}

TEST_CASE("null calibration: same distribution gives vote rates near 1/2 and high score") {
    Rng rng(24);
    Mat center = random_matrix(3, 4, rng);
    Task t = random_task(24, 4, 9, 25);
    CongruityConfig cfg;
    cfg.n_rounds = 400;
    cfg.seed = 11;
    RhoSpec rho{{{"out"}}};
    // both sides draw i.i.d. from the same family; the compared models are
    // two independent draws as well
    auto sampler = gaussian_family(center, center, 0.3);
    Rng pick(1);
    CausalModel m1 = sampler(1, -1, pick);
    CausalModel m2 = sampler(2, -2, pick);
    CongruityReport r = congruity(m1, m2, t, cfg, sampler, rho, rho);
    const double se = std::sqrt(0.25 / cfg.n_rounds);
    CHECK(std::abs(r.p1_hat - 0.5) <= 3 * se);
    CHECK(std::abs(r.p2_hat - 0.5) <= 3 * se);
    CHECK(r.score >= 0.8);
    CHECK_FALSE(r.degenerate_variants);
}

TEST_CASE("separated clusters give score near 0") {
    Rng rng(26);
    Mat center1 = random_matrix(3, 4, rng);
    Mat center2 = center1 + 50.0 * Mat::Ones(3, 4);
    Task t = random_task(24, 4, 9, 27);
    CongruityConfig cfg;
    cfg.n_rounds = 400;
    cfg.seed = 13;
    RhoSpec rho{{{"out"}}};
    auto sampler = gaussian_family(center1, center2, 0.2);
    Rng pick(2);
    CausalModel m1 = sampler(1, -1, pick);
    CausalModel m2 = sampler(2, -2, pick);
    CongruityReport r = congruity(m1, m2, t, cfg, sampler, rho, rho);
    CHECK(r.p1_hat >= 0.9);
    CHECK(r.p2_hat >= 0.9);
    CHECK(r.score <= 0.1);
    CHECK(r.verdict == "different");
}

TEST_CASE("congruity rejects n_rounds = 0") {
    Rng rng(28);
    CausalModel m = linear_model(random_matrix(2, 3, rng));
    Task t = random_task(8, 3, 5, 29);
    CongruityConfig cfg;
    cfg.n_rounds = 0;
    RhoSpec rho{{{"out"}}};
    auto sampler = [&](int, int, Rng&) { return m; };
    CHECK_THROWS_AS(congruity(m, m, t, cfg, sampler, rho, rho), ConfigError);
}

TEST_CASE("bootstrap_ci") {
    CongruityConfig cfg;
    cfg.bootstrap_samples = 20;
    cfg.seed = 3;
    SUBCASE("identical vote pairs give a zero-width interval at the score") {
        std::vector<std::pair<int, int>> votes(50, {1, 0});
        auto [lo, hi] = bootstrap_ci(votes, cfg);
        CHECK(lo == doctest::Approx(1.0));
        CHECK(hi == doctest::Approx(1.0));
    }
    SUBCASE("width shrinks roughly like 1/sqrt(n)") {
        CongruityConfig wide = cfg;
        wide.bootstrap_samples = 400;
        Rng rng(17);
        double widths[3];
        int idx = 0;
        for (int n : {50, 200, 800}) {
            std::vector<std::pair<int, int>> votes;
            for (int i = 0; i < n; ++i)
                votes.push_back({rng.next_double() < 0.5 ? 1 : 0,
                                 rng.next_double() < 0.5 ? 1 : 0});
            auto [lo, hi] = bootstrap_ci(votes, wide);
            widths[idx++] = hi - lo;
            CHECK(hi - lo > 0.0);
        }
        CHECK(widths[1] < widths[0]);
        CHECK(widths[2] < widths[1]);
    }
    SUBCASE("too few samples or rounds") {
        std::vector<std::pair<int, int>> one(1, {1, 1});
        CHECK_THROWS_AS(bootstrap_ci(one, cfg), InsufficientRounds);
        CongruityConfig b1 = cfg;
        b1.bootstrap_samples = 1;
        std::vector<std::pair<int, int>> votes(10, {1, 0});
        CHECK_THROWS_AS(bootstrap_ci(votes, b1), InsufficientRounds);
    }
}

TEST_CASE("score identity: score == 1 - |p1 + p2 - 1| exactly") {
    Rng rng(30);
    Mat center = random_matrix(2, 3, rng);
    Task t = random_task(12, 3, 5, 31);
    CongruityConfig cfg;
    cfg.n_rounds = 37;
    RhoSpec rho{{{"out"}}};
    auto sampler = gaussian_family(center, center, 0.5);
    Rng pick(3);
    CausalModel m1 = sampler(1, -1, pick);
    CausalModel m2 = sampler(2, -2, pick);
    CongruityReport r = congruity(m1, m2, t, cfg, sampler, rho, rho);
    CHECK(r.score == doctest::Approx(1.0 - std::abs(r.p1_hat + r.p2_hat - 1.0)).epsilon(1e-15));
    CHECK(r.score >= 0.0);
    CHECK(r.score <= 1.0);
}
