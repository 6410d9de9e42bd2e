#include "interpeq/reprsim.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <Eigen/SVD>

#include "interpeq/serialize.hpp"

namespace interpeq {

Mat ReprMatrix::concat() const {
    Mat out(rows(), total_cols());
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.middleCols(at, b.cols()) = b;
        at += b.cols();
    }
    return out;
}

namespace {

void validate_chain(const CausalModel& model, const RhoSpec& rho) {
    if (rho.groups.empty()) throw NonChainPooling("rho has no groups");
    std::vector<int> group_of(model.size(), -1);
    for (std::size_t g = 0; g < rho.groups.size(); ++g) {
        if (rho.groups[g].empty()) throw NonChainPooling("empty pooling group");
        for (const auto& id : rho.groups[g]) {
            const int idx = model.index_of(id);  // throws UnknownVariable
            if (group_of[static_cast<std::size_t>(idx)] != -1)
                throw NonChainPooling("variable '" + id + "' pooled into two layers");
            group_of[static_cast<std::size_t>(idx)] = static_cast<int>(g);
        }
    }
    // Backward reachability through unpooled variables: group g (g >= 1) may
    // only see group g-1; group 0 may only see the input.
    for (std::size_t g = 0; g < rho.groups.size(); ++g) {
        std::set<int> hit;
        std::vector<std::string> frontier = rho.groups[g];
        std::set<std::string> visited(frontier.begin(), frontier.end());
        while (!frontier.empty()) {
            const std::string id = frontier.back();
            frontier.pop_back();
            const Transition* t = model.transition(id);
            if (!t) continue;  // input
            for (const auto& parent : t->parents) {
                const int pidx = model.index_of(parent);
                const int pg = group_of[static_cast<std::size_t>(pidx)];
                if (pg == static_cast<int>(g)) continue;  // intra-layer edge
                if (pg >= 0) {
                    hit.insert(pg);
                    continue;
                }
                if (visited.insert(parent).second) frontier.push_back(parent);
            }
        }
        if (g == 0) {
            if (!hit.empty())
                throw NonChainPooling("first pooling group depends on a pooled layer");
        } else if (hit != std::set<int>{static_cast<int>(g) - 1}) {
            throw NonChainPooling("pooling group " + std::to_string(g) +
                                  " does not read exclusively from group " + std::to_string(g - 1));
        }
    }
}

double rms_residual(const Mat& X, const Mat& W, const Mat& Y) {
    if (Y.cols() == 0) return 0.0;
    const Mat E = X * W.transpose() - Y;
    return std::sqrt(E.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, E.rows())));
}

double spectral_norm(const Mat& W) {
    if (W.rows() == 0 || W.cols() == 0) return 0.0;
    Eigen::BDCSVD<Mat> svd(W);
    return svd.singularValues()(0);
}

Mat clip_singular_values(const Mat& W) {
    if (W.rows() == 0 || W.cols() == 0) return W;
    Eigen::BDCSVD<Mat> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vec s = svd.singularValues();
    bool any = false;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > 1.0) {
            s[i] = 1.0;
            any = true;
        }
    }
    if (!any) return W;
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace

ReprMatrix get_reprs(const CausalModel& model, const Task& task, const RhoSpec& rho) {
    validate_chain(model, rho);
    ReprMatrix out;
    out.blocks.resize(rho.groups.size());
    std::vector<Eigen::Index> widths(rho.groups.size(), 0);
    for (std::size_t g = 0; g < rho.groups.size(); ++g) {
        Eigen::Index w = 0;
        for (const auto& id : rho.groups[g]) w += model.variable(id).arity;
        widths[g] = w;
        out.blocks[g].resize(static_cast<Eigen::Index>(task.inputs.size()), w);
    }
    for (std::size_t i = 0; i < task.inputs.size(); ++i) {
        Solution sol = model.solve(task.input_vector(i));
        for (std::size_t g = 0; g < rho.groups.size(); ++g) {
            Eigen::Index at = 0;
            for (const auto& id : rho.groups[g]) {
                const Vec& v = sol.value(id);
                out.blocks[g].row(static_cast<Eigen::Index>(i)).segment(at, v.size()) =
                    v.transpose();
                at += v.size();
            }
        }
    }
    return out;
}

PreparedRepr prepare_matrix(const Mat& m) {
    PreparedRepr out;
    std::vector<Eigen::Index> kept;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double span = m.col(c).maxCoeff() - m.col(c).minCoeff();
        if (span != 0.0) kept.push_back(c);
    }
    out.kept = kept;
    out.data.resize(m.rows(), static_cast<Eigen::Index>(kept.size()));
    out.mean.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const double mu = m.col(kept[i]).mean();
        out.mean[static_cast<Eigen::Index>(i)] = mu;
        out.data.col(static_cast<Eigen::Index>(i)) = m.col(kept[i]).array() - mu;
    }
    return out;
}

PreparedRepr prepare_repr(const ReprMatrix& r) { return prepare_matrix(r.concat()); }

LinearFit fit_constrained(const Mat& X, const Mat& Y) {
    return fit_constrained(X, Y, {});
}

LinearFit fit_constrained(const Mat& X, const Mat& Y, const std::vector<Mat>& hint_maps) {
    if (X.rows() != Y.rows()) throw ShapeMismatch("fit_constrained: row counts differ");
    if (X.rows() == 0) throw ShapeMismatch("fit_constrained: empty data");
    const double m = static_cast<double>(X.rows());
    LinearFit best;
    best.map = Mat::Zero(Y.cols(), X.cols());
    best.operator_norm = 0.0;
    best.residual = std::sqrt(Y.squaredNorm() / m);  // zero-map fallback
    if (X.cols() == 0 || Y.cols() == 0) return best;

    // Double-sided reduction. Any W can be written Vy * W'' * Vr^T + leak
    // terms that only hurt: the optimum lives in span(Vy) x span(Vr), so the
    // whole search happens on an (ry x r) matrix with r, ry <= #rows.
    Eigen::BDCSVD<Mat> svd_x(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec sx = svd_x.singularValues();
    const double smax = sx.size() ? sx(0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sx.size(); ++i)
        if (sx(i) > smax * 1e-12) ++rank;
    if (rank == 0 || smax == 0.0) return best;
    const Mat Vr = svd_x.matrixV().leftCols(rank);
    const Mat Xr = svd_x.matrixU().leftCols(rank) * sx.head(rank).asDiagonal();  // m x r

    Eigen::BDCSVD<Mat> svd_y(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec sy = svd_y.singularValues();
    const double sy_max = sy.size() ? sy(0) : 0.0;
    Eigen::Index ry = 0;
    for (Eigen::Index i = 0; i < sy.size(); ++i)
        if (sy(i) > sy_max * 1e-14) ++ry;
    if (ry == 0) return best;  // Y is exactly zero; the zero map is optimal
    const Mat Vy = svd_y.matrixV().leftCols(ry);
    const Mat Yr = svd_y.matrixU().leftCols(ry) * sy.head(ry).asDiagonal();  // m x ry
    double y_leak_sq = 0.0;  // mass outside the kept Y directions
    for (Eigen::Index i = ry; i < sy.size(); ++i) y_leak_sq += sy(i) * sy(i);

    // residual(W'')^2 = ||Xr W''^T - Yr||_F^2 + y_leak_sq (exact).
    auto reduced_residual = [&](const Mat& Wrr) {
        return std::sqrt(((Xr * Wrr.transpose() - Yr).squaredNorm() + y_leak_sq) / m);
    };
    auto consider = [&](const Mat& Wrr) {
        const double res = reduced_residual(Wrr);
        if (res < best.residual) {
            best.residual = res;
            best.map = Vy * Wrr * Vr.transpose();
            best.operator_norm = spectral_norm(Wrr);
        }
    };

    const Mat YtUr = Yr.transpose() * svd_x.matrixU().leftCols(rank);  // ry x r

    // Candidate 1: min-norm least squares, kept only when already feasible
    // (in that case it is the exact constrained optimum).
    {
        Mat Wls = YtUr;
        for (Eigen::Index i = 0; i < rank; ++i) Wls.col(i) /= sx(i);
        if (spectral_norm(Wls) <= 1.0 + 1e-9) consider(Wls);
    }

    // Candidate 1b: the identity map, always feasible on square problems.
    if (X.cols() == Y.cols()) consider(Vy.transpose() * Vr);

    // Candidate 2: ridge -> spectral projection -> projected gradient.
    {
        double trace_xtx = 0.0;
        for (Eigen::Index i = 0; i < sx.size(); ++i) trace_xtx += sx(i) * sx(i);
        const double lambda = 1e-6 * trace_xtx;
        Mat W = YtUr;
        for (Eigen::Index i = 0; i < rank; ++i) W.col(i) *= sx(i) / (sx(i) * sx(i) + lambda);
        const double sn = spectral_norm(W);
        if (sn > 1.0) W /= sn;
        const double step = 0.1 / (smax * smax);
        for (int it = 0; it < 25; ++it) {
            const Mat grad = 2.0 * (Xr * W.transpose() - Yr).transpose() * Xr;
            W = clip_singular_values(W - step * grad);
        }
        consider(W);
    }

    // External hints (full X -> Y coordinates): evaluated exactly, including
    // any component outside the reduced spans.
    for (const auto& H : hint_maps) {
        if (H.rows() != Y.cols() || H.cols() != X.cols()) continue;
        if (spectral_norm(H) > 1.0 + 1e-9) continue;
        const double res = rms_residual(X, H, Y);
        if (res < best.residual) {
            best.residual = res;
            best.map = H;
            best.operator_norm = spectral_norm(H);
        }
    }

    return best;
}

ReprDistDetail repr_dist_detail(const ReprMatrix& a, const ReprMatrix& b,
                                const std::vector<Mat>& hints_forward,
                                const std::vector<Mat>& hints_backward) {
    if (a.rows() != b.rows()) throw ShapeMismatch("repr_dist: task row counts differ");
    PreparedRepr pa = prepare_repr(a);
    PreparedRepr pb = prepare_repr(b);
    ReprDistDetail d;
    d.forward = fit_constrained(pa.data, pb.data, hints_forward);
    d.backward = fit_constrained(pb.data, pa.data, hints_backward);
    d.value = std::max(d.forward.residual, d.backward.residual);
    return d;
}

double repr_dist(const ReprMatrix& a, const ReprMatrix& b) {
    return repr_dist_detail(a, b).value;
}

ReprQuality repr_quality(const ReprMatrix& r, const Mat& h_outputs) {
    if (r.rows() != h_outputs.rows()) throw ShapeMismatch("repr_quality: row counts differ");
    ReprQuality q;
    PreparedRepr ph = prepare_matrix(h_outputs);
    for (const auto& block : r.blocks) {
        PreparedRepr pb = prepare_matrix(block);
        q.encoder_residual.push_back(fit_constrained(pb.data, ph.data).residual);
        q.decoder_residual.push_back(fit_constrained(ph.data, pb.data).residual);
    }
    PreparedRepr pr = prepare_repr(r);
    q.encoder = fit_constrained(pr.data, ph.data);
    q.decoder = fit_constrained(ph.data, pr.data);
    q.delta = std::max(q.encoder.residual, q.decoder.residual);
    return q;
}

Mat model_outputs(const CausalModel& m, const Task& task) {
    Mat out(static_cast<Eigen::Index>(task.inputs.size()),
            m.variable(m.output_id()).arity);
    for (std::size_t i = 0; i < task.inputs.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.solve(task.input_vector(i)).output().transpose();
    return out;
}

double functional_gap(const CausalModel& a, const CausalModel& b, const Task& task,
                      GapNorm norm) {
    const Mat oa = model_outputs(a, task);
    const Mat ob = model_outputs(b, task);
    if (oa.rows() != ob.rows() || oa.cols() != ob.cols())
        throw ShapeMismatch("functional_gap: output shapes differ");
    if (norm == GapNorm::Max) {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < oa.rows(); ++i)
            worst = std::max(worst, (oa.row(i) - ob.row(i)).norm());
        return worst;
    }
    return std::sqrt((oa - ob).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, oa.rows())));
}

double lipschitz_estimate(
    const std::vector<std::pair<const CausalModel*, const CausalModel*>>& pairs,
    const Task& task, const RhoSpec& rho,
    const std::function<double(const CausalModel&, const CausalModel&)>& impl_dist,
    bool* any_valid) {
    double best = 0.0;
    bool valid = false;
    for (const auto& [ma, mb] : pairs) {
        const double d = impl_dist(*ma, *mb);
        if (d < 1e-12) continue;  // division guard
        const ReprMatrix ra = get_reprs(*ma, task, rho);
        const ReprMatrix rb = get_reprs(*mb, task, rho);
        best = std::max(best, repr_dist(ra, rb) / d);
        valid = true;
    }
    if (any_valid) *any_valid = valid;
    return best;
}

void save_repr(const ReprMatrix& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifact("cannot write '" + path + "'");
    out.write("RMX1", 4);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(r.blocks.size()));
    put_u32(static_cast<std::uint32_t>(r.rows()));
    for (const auto& blk : r.blocks) put_u32(static_cast<std::uint32_t>(blk.cols()));
    for (const auto& blk : r.blocks) {
        for (Eigen::Index i = 0; i < blk.rows(); ++i) {
            for (Eigen::Index j = 0; j < blk.cols(); ++j) {
                const double v = blk(i, j);
                std::uint64_t bits;
                std::memcpy(&bits, &v, sizeof(bits));
                unsigned char b[8];
                for (int k = 0; k < 8; ++k)
                    b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
                out.write(reinterpret_cast<const char*>(b), 8);
            }
        }
    }
}

ReprMatrix load_repr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "RMX1", 4) != 0)
        throw MissingArtifact("'" + path + "' is not a representation file");
    auto get_u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t layers = get_u32();
    const std::uint32_t rows = get_u32();
    std::vector<std::uint32_t> cols(layers);
    for (auto& c : cols) c = get_u32();
    ReprMatrix r;
    for (std::uint32_t l = 0; l < layers; ++l) {
        Mat blk(rows, cols[l]);
        for (std::uint32_t i = 0; i < rows; ++i) {
            for (std::uint32_t j = 0; j < cols[l]; ++j) {
                unsigned char b[8];
                in.read(reinterpret_cast<char*>(b), 8);
                std::uint64_t bits = 0;
                for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
                double v;
                std::memcpy(&v, &bits, sizeof(v));
                blk(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            }
        }
        r.blocks.push_back(std::move(blk));
    }
    if (!in) throw MissingArtifact("'" + path + "' is truncated");
    return r;
}

}  // namespace interpeq
