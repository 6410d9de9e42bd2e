#include "interpeq/equiv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace interpeq {

Mat DistillationMap::apply(const CausalModel& model, const Task& task) const {
    if (ids.empty()) throw ConfigError("distillation map selects no variables");
    Eigen::Index width = 0;
    for (const auto& id : ids) width += model.variable(id).arity;  // throws UnknownVariable
    Mat raw(static_cast<Eigen::Index>(task.inputs.size()), width);
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        Solution sol = model.solve(task.input_vector(i));
        Eigen::Index at = 0;
        for (const auto& id : ids) {
            const Vec& v = sol.value(id);
            raw.row(static_cast<Eigen::Index>(i)).segment(at, v.size()) = v.transpose();
            at += v.size();
        }
    }
    if (!projection) return raw;
    if (projection->cols() != width)
        throw ShapeMismatch("distillation projection expects width " +
                            std::to_string(projection->cols()));
    return raw * projection->transpose();
}

DistillationMap output_distillation(const CausalModel& model) {
    DistillationMap phi;
    phi.ids = {model.output_id()};
    return phi;
}

namespace {

double rms_row_distance(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch("distillation outputs differ in shape");
    return std::sqrt((a - b).squaredNorm() /
                     static_cast<double>(std::max<Eigen::Index>(1, a.rows())));
}

std::vector<Mat> project_all(const std::vector<const CausalModel*>& models,
                             const DistillationMap& phi, const Task& task) {
    std::vector<Mat> out;
    out.reserve(models.size());
    for (const auto* m : models) out.push_back(phi.apply(*m, task));
    return out;
}

Mat cross_distances(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    Mat d(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rms_row_distance(a[i], b[j]);
    return d;
}

}  // namespace

double impl_distance(const CausalModel& f1, const CausalModel& f2, const DistillationMap& phi,
                     const Task& task) {
    return rms_row_distance(phi.apply(f1, task), phi.apply(f2, task));
}

double hausdorff_from_matrix(const Mat& d) {
    double sup_a = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        double inf_b = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < d.cols(); ++j) inf_b = std::min(inf_b, d(i, j));
        sup_a = std::max(sup_a, inf_b);
    }
    double sup_b = 0.0;
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
        double inf_a = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < d.rows(); ++i) inf_a = std::min(inf_a, d(i, j));
        sup_b = std::max(sup_b, inf_a);
    }
    return std::max(sup_a, sup_b);
}

double diameter_from_matrix(const Mat& d) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (Eigen::Index j = 0; j < d.cols(); ++j) worst = std::max(worst, d(i, j));
    return worst;
}

double hausdorff_distance(const std::vector<const CausalModel*>& a,
                          const std::vector<const CausalModel*>& b, const DistillationMap& phi,
                          const Task& task) {
    if (a.empty() || b.empty()) throw EmptySet("hausdorff over an empty set");
    return hausdorff_from_matrix(cross_distances(project_all(a, phi, task),
                                                 project_all(b, phi, task)));
}

double compression(const std::vector<const CausalModel*>& set, const DistillationMap& phi,
                   const Task& task) {
    if (set.empty()) throw EmptySet("compression over an empty set");
    const auto proj = project_all(set, phi, task);
    return diameter_from_matrix(cross_distances(proj, proj));
}

double empirical_diameter(const std::vector<const CausalModel*>& samples,
                          const DistillationMap& phi, const Task& task) {
    if (samples.size() < 2) throw InsufficientSamples("empirical diameter needs >= 2 samples");
    const auto proj = project_all(samples, phi, task);
    return diameter_from_matrix(cross_distances(proj, proj));
}

int sample_size_bound(double covering_number, double p_min, double delta) {
    if (covering_number < 1.0) throw DomainError("covering number must be >= 1");
    if (p_min <= 0.0 || p_min > 1.0) throw DomainError("p_min must be in (0, 1]");
    if (delta <= 0.0 || delta >= 1.0) throw DomainError("delta must be in (0, 1)");
    const double m = (std::log(covering_number) - std::log(delta)) / p_min;
    return std::max(1, static_cast<int>(std::ceil(m)));
}

CoveringEstimate greedy_covering(const Mat& distances, double radius) {
    const Eigen::Index n = distances.rows();
    CoveringEstimate est;
    est.assignment.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> ball_sizes;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (est.assignment[static_cast<std::size_t>(i)] != -1) continue;
        const int ball = est.covering_number++;
        ball_sizes.push_back(0);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (est.assignment[static_cast<std::size_t>(j)] == -1 && distances(i, j) <= radius) {
                est.assignment[static_cast<std::size_t>(j)] = ball;
                ++ball_sizes[static_cast<std::size_t>(ball)];
            }
        }
    }
    int min_size = n > 0 ? ball_sizes[0] : 0;
    for (int s : ball_sizes) min_size = std::min(min_size, s);
    est.p_min = n > 0 ? static_cast<double>(min_size) / static_cast<double>(n) : 0.0;
    return est;
}

Mat ReadoutMap::apply(const ReprMatrix& r) const {
    if (last_block) {
        if (r.blocks.empty()) throw ShapeMismatch("readout on empty representation");
        return r.blocks.back();
    }
    PreparedRepr p = prepare_repr(r);
    return p.data * fitted.transpose();
}

double measure_omega(const ReadoutMap& psi, const ReprMatrix& r, const Mat& phi_values) {
    const Mat mapped = psi.apply(r);
    if (mapped.rows() != phi_values.rows() || mapped.cols() != phi_values.cols())
        throw ShapeMismatch("readout codomain does not match the distillation codomain");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < mapped.rows(); ++i)
        worst = std::max(worst, (mapped.row(i) - phi_values.row(i)).norm());
    return worst;
}

namespace {

struct PairContext {
    ReprMatrix r1, r2;
    ReprQuality q1, q2;
    double delta1 = 0, delta2 = 0, gap = 0, omega = 0;
    double kappa1 = 0, kappa2 = 0, d_interp = 0;
    double d_repr = 0;
};

// Selection matrix between two kept-column masks over the same full space.
Mat mask_bridge(const std::vector<Eigen::Index>& kept_to,
                const std::vector<Eigen::Index>& kept_from) {
    Mat s = Mat::Zero(static_cast<Eigen::Index>(kept_to.size()),
                      static_cast<Eigen::Index>(kept_from.size()));
    for (std::size_t i = 0; i < kept_to.size(); ++i)
        for (std::size_t j = 0; j < kept_from.size(); ++j)
            if (kept_to[i] == kept_from[j]) s(static_cast<Eigen::Index>(i),
                                              static_cast<Eigen::Index>(j)) = 1.0;
    return s;
}

PairContext measure_pair(const TheoremInputs& in) {
    if (!in.set1 || !in.set2 || !in.task) throw MissingTerm("theorem bundle is incomplete");
    const Task& task = *in.task;
    PairContext ctx;
    ctx.r1 = get_reprs(in.set1->base, task, in.rho1);
    ctx.r2 = get_reprs(in.set2->base, task, in.rho2);
    const Mat h1 = model_outputs(in.set1->base, task);
    const Mat h2 = model_outputs(in.set2->base, task);
    ctx.q1 = repr_quality(ctx.r1, h1);
    ctx.q2 = repr_quality(ctx.r2, h2);
    ctx.delta1 = ctx.q1.delta;
    ctx.delta2 = ctx.q2.delta;
    ctx.gap = functional_gap(in.set1->base, in.set2->base, task, GapNorm::Max);

    ReadoutMap psi;  // unembedded-output block extraction; 1-Lipschitz
    ctx.omega = std::max(measure_omega(psi, ctx.r1, in.phi.apply(in.set1->base, task)),
                         measure_omega(psi, ctx.r2, in.phi.apply(in.set2->base, task)));
    if (ctx.omega > in.omega_cap)
        throw AssumptionViolated("readout gap omega = " + std::to_string(ctx.omega) +
                                 " exceeds the configured cap");

    const auto models1 = in.set1->all_models();
    const auto models2 = in.set2->all_models();
    ctx.kappa1 = compression(models1, in.phi, task);
    ctx.kappa2 = compression(models2, in.phi, task);
    ctx.d_interp = hausdorff_distance(models1, models2, in.phi, task);

    // d_repr with certified composition hints: encoder of one side into the
    // decoder of the other, bridged across the two h-space masks.
    PreparedRepr p1 = prepare_repr(ctx.r1);
    PreparedRepr p2 = prepare_repr(ctx.r2);
    PreparedRepr ph1 = prepare_matrix(h1);
    PreparedRepr ph2 = prepare_matrix(h2);
    std::vector<Mat> fwd, bwd;
    fwd.push_back(ctx.q2.decoder.map * mask_bridge(ph2.kept, ph1.kept) * ctx.q1.encoder.map);
    bwd.push_back(ctx.q1.decoder.map * mask_bridge(ph1.kept, ph2.kept) * ctx.q2.encoder.map);
    ctx.d_repr = repr_dist_detail(ctx.r1, ctx.r2, fwd, bwd).value;
    return ctx;
}

void fill_terms(BoundReport* r, const PairContext& ctx) {
    r->terms["kappa1"] = ctx.kappa1;
    r->terms["kappa2"] = ctx.kappa2;
    r->terms["delta1"] = ctx.delta1;
    r->terms["delta2"] = ctx.delta2;
    r->terms["Delta"] = ctx.gap;
    r->terms["omega"] = ctx.omega;
    r->terms["d_repr"] = ctx.d_repr;
    r->terms["d_interp"] = ctx.d_interp;
}

}  // namespace

BoundReport check_thm1(const TheoremInputs& in) {
    PairContext ctx = measure_pair(in);
    BoundReport r;
    r.name = "thm1-sufficient";
    r.lhs = ctx.d_interp;
    r.rhs = ctx.kappa1 + ctx.kappa2 + 2.0 * ctx.omega + ctx.d_repr + ctx.delta1 + ctx.delta2 +
            ctx.gap + in.tol;
    r.slack = r.rhs - r.lhs;
    r.holds = r.lhs <= r.rhs;
    fill_terms(&r, ctx);
    r.note = "psi = output-block readout; d_repr measured with certified composition hints";
    return r;
}

BoundReport check_thm2(const TheoremInputs& in) {
    PairContext ctx = measure_pair(in);

    // Safety-factored empirical Lipschitz estimate over within-set pairs.
    const auto models1 = in.set1->all_models();
    std::vector<std::pair<const CausalModel*, const CausalModel*>> pairs;
    for (std::size_t i = 0; i < models1.size() && static_cast<int>(pairs.size()) < in.lip_pair_cap;
         ++i)
        for (std::size_t j = i + 1;
             j < models1.size() && static_cast<int>(pairs.size()) < in.lip_pair_cap; ++j)
            pairs.push_back({models1[i], models1[j]});
    bool any_valid = false;
    const DistillationMap phi = in.phi;
    const Task& task = *in.task;
    double lip = lipschitz_estimate(
        pairs, task, in.rho1,
        [&phi, &task](const CausalModel& a, const CausalModel& b) {
            return impl_distance(a, b, phi, task);
        },
        &any_valid);
    lip *= in.lip_safety;

    BoundReport r;
    r.name = "thm2-necessary";
    r.lhs = ctx.d_repr;
    r.rhs = ctx.d_interp * (lip + 1.0) + ctx.delta1 + ctx.delta2 + ctx.gap + in.tol;
    r.slack = r.rhs - r.lhs;
    r.holds = r.lhs <= r.rhs;
    fill_terms(&r, ctx);
    r.terms["lip_estimate"] = lip;
    r.terms["epsilon_equiv"] = ctx.d_interp;
    r.note = any_valid ? "falsification test: Lipschitz term is a safety-factored empirical estimate"
                       : "no pair cleared the division guard; Lipschitz estimate is 0";
    return r;
}

namespace {

struct VoteTables {
    Mat within;         // d_repr over set1 models (diag unused)
    Mat cross;          // d_repr set1 x set2
    double kappa1 = 0;  // phi-space diameter of set1
    double kappa2 = 0;
    double d_interp = 0;
    Mat within2;        // d_repr over set2 models
};

VoteTables build_vote_tables(const TheoremInputs& in) {
    if (!in.set1 || !in.set2 || !in.task) throw MissingTerm("theorem bundle is incomplete");
    const Task& task = *in.task;
    const auto models1 = in.set1->all_models();
    const auto models2 = in.set2->all_models();
    std::vector<ReprMatrix> r1, r2;
    for (const auto* m : models1) r1.push_back(get_reprs(*m, task, in.rho1));
    for (const auto* m : models2) r2.push_back(get_reprs(*m, task, in.rho2));

    VoteTables t;
    const auto n1 = static_cast<Eigen::Index>(r1.size());
    const auto n2 = static_cast<Eigen::Index>(r2.size());
    t.within.resize(n1, n1);
    t.within2.resize(n2, n2);
    t.cross.resize(n1, n2);
    for (Eigen::Index i = 0; i < n1; ++i)
        for (Eigen::Index j = 0; j < n1; ++j)
            t.within(i, j) = i == j ? 0.0
                                    : repr_dist(r1[static_cast<std::size_t>(i)],
                                                r1[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < n2; ++i)
        for (Eigen::Index j = 0; j < n2; ++j)
            t.within2(i, j) = i == j ? 0.0
                                     : repr_dist(r2[static_cast<std::size_t>(i)],
                                                 r2[static_cast<std::size_t>(j)]);
    for (Eigen::Index i = 0; i < n1; ++i)
        for (Eigen::Index k = 0; k < n2; ++k)
            t.cross(i, k) = repr_dist(r1[static_cast<std::size_t>(i)],
                                      r2[static_cast<std::size_t>(k)]);
    t.kappa1 = compression(models1, in.phi, task);
    t.kappa2 = compression(models2, in.phi, task);
    t.d_interp = hausdorff_distance(models1, models2, in.phi, task);
    return t;
}

double within_tail(const Mat& within, double threshold) {
    int bad = 0, total = 0;
    for (Eigen::Index i = 0; i < within.rows(); ++i) {
        for (Eigen::Index j = 0; j < within.cols(); ++j) {
            if (i == j) continue;
            ++total;
            if (within(i, j) > threshold) ++bad;
        }
    }
    return total ? static_cast<double>(bad) / total : 0.0;
}

double cross_tail(const Mat& cross, double threshold) {
    int bad = 0, total = 0;
    for (Eigen::Index i = 0; i < cross.rows(); ++i) {
        for (Eigen::Index k = 0; k < cross.cols(); ++k) {
            ++total;
            if (cross(i, k) < threshold) ++bad;
        }
    }
    return total ? static_cast<double>(bad) / total : 0.0;
}

double exact_vote_rate(const Mat& within, const Mat& cross) {
    // mean over ordered triples (i != j, k) of [within(i,j) <= cross(i,k)]
    long hits = 0, total = 0;
    for (Eigen::Index i = 0; i < within.rows(); ++i) {
        for (Eigen::Index j = 0; j < within.cols(); ++j) {
            if (i == j) continue;
            for (Eigen::Index k = 0; k < cross.cols(); ++k) {
                ++total;
                if (within(i, j) <= cross(i, k)) ++hits;
            }
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

std::vector<double> epsilon_grid_values(const VoteTables& t, int points) {
    double dmax = std::max(t.cross.size() ? t.cross.maxCoeff() : 0.0,
                           t.within.size() ? t.within.maxCoeff() : 0.0);
    if (dmax <= 0.0) dmax = 1.0;
    std::vector<double> grid;
    for (int g = 1; g <= points; ++g)
        grid.push_back(dmax * static_cast<double>(g) / static_cast<double>(points));
    return grid;
}

}  // namespace

BoundReport check_thm3(const TheoremInputs& in) {
    VoteTables t = build_vote_tables(in);
    const double p_hat = exact_vote_rate(t.within, t.cross);

    double best = std::numeric_limits<double>::infinity();
    double best_eps = 0.0;
    for (double eps : epsilon_grid_values(t, in.epsilon_grid)) {
        if (t.kappa1 + eps > t.d_interp - eps) continue;  // tail monotonicity validity
        const double tails = within_tail(t.within, t.kappa1 + eps) +
                             cross_tail(t.cross, t.d_interp - eps);
        if (tails < best) {
            best = tails;
            best_eps = eps;
        }
    }

    BoundReport r;
    r.name = "thm3-vote-rate";
    r.lhs = p_hat;
    if (std::isinf(best)) {
        r.rhs = 0.0;  // no valid epsilon: the bound is vacuous
        r.holds = true;
        r.note = "no epsilon satisfies kappa+eps <= d_interp-eps; bound vacuously holds";
    } else {
        r.rhs = 1.0 - best - in.mc_margin;
        r.holds = p_hat >= r.rhs - 1e-12;
        r.note = "tails enumerated exactly on the finite sets";
        r.terms["epsilon_grid_best"] = best_eps;
        r.terms["tail_sum"] = best;
    }
    r.slack = r.lhs - r.rhs;
    r.terms["p_hat"] = p_hat;
    r.terms["kappa1"] = t.kappa1;
    r.terms["d_interp"] = t.d_interp;
    return r;
}

CorollaryEnvelope corollary_envelope(const TheoremInputs& in) {
    VoteTables t = build_vote_tables(in);
    const double p1 = exact_vote_rate(t.within, t.cross);
    const double p2 = exact_vote_rate(t.within2, t.cross.transpose());

    CorollaryEnvelope env;
    env.score = 1.0 - std::abs(p1 + p2 - 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (double eps : epsilon_grid_values(t, in.epsilon_grid)) {
        const double f = within_tail(t.within, t.kappa1 + eps) +
                         2.0 * cross_tail(t.cross, t.d_interp - eps) +
                         within_tail(t.within2, t.kappa2 + eps);
        best = std::min(best, f);
    }
    env.f = best;
    env.applicable = best >= 1.0;
    env.holds = !env.applicable ||
                (env.score >= 2.0 - env.f - 1e-12 && env.score <= env.f + 1e-12);
    return env;
}

}  // namespace interpeq
