#include "interpeq/congruity.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace interpeq {

int repr_dist_vote(const ReprMatrix& r1, const ReprMatrix& r2, const ReprMatrix& r3) {
    return repr_dist(r1, r2) <= repr_dist(r1, r3) ? 1 : 0;
}

double normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) throw DomainError("normal_quantile needs p in (0,1)");
    // bisection on the CDF via erfc; plenty accurate for interval construction
    double lo = -12.0, hi = 12.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
        (cdf < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

namespace {

double score_of(double p1, double p2) { return 1.0 - std::abs(p1 + p2 - 1.0); }

void finalize_report(CongruityReport* r, const CongruityConfig& cfg,
                     const std::vector<double>& cross) {
    double s1 = 0, s2 = 0;
    for (const auto& [a, b] : r->votes) {
        s1 += a;
        s2 += b;
    }
    const double n = static_cast<double>(r->votes.size());
    r->p1_hat = s1 / n;
    r->p2_hat = s2 / n;
    r->score = score_of(r->p1_hat, r->p2_hat);
    // Every observed distance identical (e.g. identity "variants"): ties all
    // the way down, which the <= rule turns into score 0.
    r->degenerate_variants = true;
    for (std::size_t i = 0; i < r->d11.size(); ++i) {
        if (r->d11[i] != cross[i] || r->d22[i] != cross[i]) r->degenerate_variants = false;
    }
    if (r->votes.size() >= 2 && cfg.bootstrap_samples >= 2) {
        auto [lo, hi] = bootstrap_ci(r->votes, cfg);
        r->ci_lo = lo;
        r->ci_hi = hi;
    } else {
        r->ci_lo = r->score;
        r->ci_hi = r->score;
    }
    r->verdict = r->ci_lo > cfg.null_band ? "equivalent-not-rejected" : "different";
}

}  // namespace

std::pair<double, double> bootstrap_ci(const std::vector<std::pair<int, int>>& votes,
                                       const CongruityConfig& cfg) {
    if (votes.size() < 2) throw InsufficientRounds("bootstrap needs >= 2 rounds");
    if (cfg.bootstrap_samples < 2) throw InsufficientRounds("bootstrap needs B >= 2");
    Rng rng = Rng(cfg.seed).split(0xb007);
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(cfg.bootstrap_samples));
    for (int b = 0; b < cfg.bootstrap_samples; ++b) {
        double s1 = 0, s2 = 0;
        for (std::size_t i = 0; i < votes.size(); ++i) {
            const auto& v = votes[rng.next_below(votes.size())];
            s1 += v.first;
            s2 += v.second;
        }
        const double n = static_cast<double>(votes.size());
        scores.push_back(score_of(s1 / n, s2 / n));
    }
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size() - 1);
    const double z = normal_quantile(0.5 + cfg.confidence / 2.0);
    const double half = z * std::sqrt(var);
    return {std::clamp(mean - half, 0.0, 1.0), std::clamp(mean + half, 0.0, 1.0)};
}

// Each round draws a fresh implementation pair per side; the votes compare
// the within-pair distance against the fresh cross distance. Both sides of
// the comparison being fresh draws is what makes the vote rate 1/2 under
// exchangeability when the two sides share a distribution.
CongruityReport congruity(const CausalModel& m1, const CausalModel& m2, const Task& task,
                          const CongruityConfig& cfg, const VariantSampler& sampler,
                          const RhoSpec& rho1, const RhoSpec& rho2) {
    if (cfg.n_rounds < 1) throw ConfigError("congruity needs n_rounds >= 1");
    (void)m1;
    (void)m2;
    CongruityReport report;
    std::vector<double> cross;
    Rng root(cfg.seed);
    for (int round = 0; round < cfg.n_rounds; ++round) {
        Rng s1a = root.split(4 * static_cast<std::uint64_t>(round));
        Rng s1b = root.split(4 * static_cast<std::uint64_t>(round) + 1);
        Rng s2a = root.split(4 * static_cast<std::uint64_t>(round) + 2);
        Rng s2b = root.split(4 * static_cast<std::uint64_t>(round) + 3);
        CausalModel h1a, h1b, h2a, h2b;
        try {
            h1a = sampler(1, round, s1a);
            h1b = sampler(1, round, s1b);
            h2a = sampler(2, round, s2a);
            h2b = sampler(2, round, s2b);
        } catch (const Error& e) {
            throw GenerationFailure(std::string("round ") + std::to_string(round) + ": " +
                                    e.what());
        }
        const ReprMatrix r1a = get_reprs(h1a, task, rho1);
        const ReprMatrix r1b = get_reprs(h1b, task, rho1);
        const ReprMatrix r2a = get_reprs(h2a, task, rho2);
        const ReprMatrix r2b = get_reprs(h2b, task, rho2);
        const double d11 = repr_dist(r1a, r1b);
        const double d22 = repr_dist(r2a, r2b);
        const double dx = repr_dist(r1a, r2a);
        report.d11.push_back(d11);
        report.d22.push_back(d22);
        cross.push_back(dx);
        report.votes.push_back({d11 <= dx ? 1 : 0, d22 <= dx ? 1 : 0});
    }
    report.d12 = cross.empty() ? 0.0 : cross.back();
    finalize_report(&report, cfg, cross);
    return report;
}

CongruityReport congruity_from_pools(const std::vector<const CausalModel*>& pool1,
                                     const RhoSpec& rho1,
                                     const std::vector<const CausalModel*>& pool2,
                                     const RhoSpec& rho2, const Task& task,
                                     const CongruityConfig& cfg) {
    if (cfg.n_rounds < 1) throw ConfigError("congruity needs n_rounds >= 1");
    if (pool1.size() < 2 || pool2.size() < 2)
        throw EmptySet("congruity pools need at least two implementations each");

    std::vector<ReprMatrix> reprs1, reprs2;
    for (const auto* m : pool1) reprs1.push_back(get_reprs(*m, task, rho1));
    for (const auto* m : pool2) reprs2.push_back(get_reprs(*m, task, rho2));

    std::map<std::pair<int, std::pair<std::size_t, std::size_t>>, double> cache;
    auto dist = [&](int which, std::size_t i, std::size_t j) {
        if (which != 2 && i > j) std::swap(i, j);  // within-pool distances are symmetric
        auto key = std::make_pair(which, std::make_pair(i, j));
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        double d = 0;
        if (which == 0) d = repr_dist(reprs1[i], reprs1[j]);
        else if (which == 1) d = repr_dist(reprs2[i], reprs2[j]);
        else d = repr_dist(reprs1[i], reprs2[j]);
        cache[key] = d;
        return d;
    };

    CongruityReport report;
    std::vector<double> cross;
    Rng root(cfg.seed);
    for (int round = 0; round < cfg.n_rounds; ++round) {
        Rng stream = root.split(static_cast<std::uint64_t>(round));
        const std::size_t i1a = stream.next_below(pool1.size());
        std::size_t i1b = stream.next_below(pool1.size() - 1);
        if (i1b >= i1a) ++i1b;  // distinct draw; identical picks only tie trivially
        const std::size_t i2a = stream.next_below(pool2.size());
        std::size_t i2b = stream.next_below(pool2.size() - 1);
        if (i2b >= i2a) ++i2b;
        const double d11 = dist(0, i1a, i1b);
        const double d22 = dist(1, i2a, i2b);
        const double dx = dist(2, i1a, i2a);
        report.d11.push_back(d11);
        report.d22.push_back(d22);
        cross.push_back(dx);
        report.votes.push_back({d11 <= dx ? 1 : 0, d22 <= dx ? 1 : 0});
    }
    report.d12 = cross.empty() ? 0.0 : cross.back();
    finalize_report(&report, cfg, cross);
    return report;
}

std::vector<CongruityCell> congruity_matrix(const std::vector<CongruityGroup>& groups,
                                            const Task& task, const CongruityConfig& cfg) {
    if (groups.size() < 2) throw ConfigError("congruity_matrix needs >= 2 groups");
    for (const auto& g : groups) {
        if (!g.set || g.set->variants.empty())
            throw EmptySet("group '" + g.name + "' has no variants");
    }
    std::vector<CongruityCell> cells;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i; j < groups.size(); ++j) {
            CongruityConfig cell_cfg = cfg;
            cell_cfg.seed = Rng(cfg.seed).split(i * 1000 + j).next_u64();
            CongruityReport report;
            if (i == j) {
                // Split-half self test: the two sides draw from disjoint
                // halves of the same pool.
                const auto& vs = groups[i].set->variants;
                if (vs.size() < 4)
                    throw EmptySet("group '" + groups[i].name +
                                   "' needs >= 4 variants for the split-half diagonal");
                std::vector<const CausalModel*> pool1, pool2;
                for (std::size_t k = 0; k < vs.size(); ++k)
                    (k % 2 == 0 ? pool1 : pool2).push_back(&vs[k]);
                report = congruity_from_pools(pool1, groups[i].rho, pool2, groups[i].rho, task,
                                              cell_cfg);
            } else {
                std::vector<const CausalModel*> pool1, pool2;
                for (const auto& v : groups[i].set->variants) pool1.push_back(&v);
                for (const auto& v : groups[j].set->variants) pool2.push_back(&v);
                report = congruity_from_pools(pool1, groups[i].rho, pool2, groups[j].rho, task,
                                              cell_cfg);
            }
            CongruityCell cell;
            cell.row = static_cast<int>(i);
            cell.col = static_cast<int>(j);
            cell.report = std::move(report);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

}  // namespace interpeq
