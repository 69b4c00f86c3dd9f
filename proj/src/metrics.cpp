#include "fdis/metrics.hpp"

#include "fdis/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>

namespace fdis {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_rows(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                const char* where) {
    if (rep.rows == 0 || rep.dim == 0) throw std::invalid_argument(std::string(where) + ": empty representation");
    if (rep.data.size() != rep.rows * rep.dim)
        throw std::invalid_argument(std::string(where) + ": representation size mismatch");
    if (factors.size() != rep.rows)
        throw std::invalid_argument(std::string(where) + ": factor rows do not match");
}

double soft_threshold(double x, double a) {
    if (x > a) return x - a;
    if (x < -a) return x + a;
    return 0.0;
}

// Coordinate-descent lasso: (1/2n)|y - Xw|^2 + alpha*|w|_1 over centered y
// and the given columns. Columns of zero scale never move.
std::vector<double> lasso_fit(const std::vector<std::vector<double>>& cols,
                              const std::vector<double>& y, double alpha) {
    const std::size_t n = y.size(), d = cols.size();
    std::vector<double> w(d, 0.0);
    std::vector<double> resid = y;
    std::vector<double> curv(d);
    for (std::size_t j = 0; j < d; ++j) {
        Eigen::Map<const Eigen::VectorXd> cj(cols[j].data(), static_cast<Eigen::Index>(n));
        curv[j] = cj.squaredNorm() / static_cast<double>(n);
    }
    Eigen::Map<Eigen::VectorXd> r(resid.data(), static_cast<Eigen::Index>(n));
    for (int sweep = 0; sweep < 1000; ++sweep) {
        double shift = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            if (curv[j] <= 0.0) continue;
            Eigen::Map<const Eigen::VectorXd> cj(cols[j].data(), static_cast<Eigen::Index>(n));
            const double rho = cj.dot(r) / static_cast<double>(n) + curv[j] * w[j];
            const double next = soft_threshold(rho, alpha) / curv[j];
            if (next != w[j]) {
                r += cj * (w[j] - next);
                shift = std::max(shift, std::abs(next - w[j]));
                w[j] = next;
            }
        }
        if (shift < 1e-10) break;
    }
    return w;
}

}  // namespace

std::vector<SceneFactors> all_scene_factors() {
    std::vector<SceneFactors> out(kSceneCount);
    for (std::size_t s = 0; s < kSceneCount; ++s) out[s] = scene_factors(s);
    return out;
}

RepMatrix compute_representation(const BoundModel& m, bool reduce) {
    const ModelHyper& hy = m.hyper;
    if (hy.image_dim != kImageDim)
        throw std::invalid_argument("compute_representation: model image_dim mismatch");
    const std::size_t n = kSceneCount;
    const std::size_t full = hy.factor_tokens * hy.factor_dim;
    RepMatrix rep;
    rep.rows = n;
    rep.dim = full;
    rep.data.resize(n * full);

    const std::size_t chunk = 256;
    std::vector<double> images;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t b = std::min(chunk, n - start);
        images.assign(b * kImageDim, 0.0);
        for (std::size_t i = 0; i < b; ++i)
            render_scene(scene_factors(start + i), images.data() + i * kImageDim);
        Tape tape;
        const Tensor imgs(Shape{b, kImageDim}, images);
        const Tensor toks = encode_factors(tape, m, imgs);  // (b*N) x d_s, sample-major
        std::copy(toks.values().begin(), toks.values().end(), rep.data.begin() + start * full);
    }
    if (!reduce) return rep;

    Eigen::Map<RowMat> x(rep.data.data(), static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(full));
    const Eigen::RowVectorXd mean = x.colwise().mean();
    RowMat centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("compute_representation: eigendecomposition failed");

    const std::size_t keep = hy.factor_tokens;
    Eigen::MatrixXd basis(full, keep);
    for (std::size_t j = 0; j < keep; ++j) {
        Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(full - 1 - j));
        Eigen::Index lead = 0;
        for (Eigen::Index i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[lead])) lead = i;
        if (v[lead] < 0.0) v = -v;
        basis.col(static_cast<Eigen::Index>(j)) = v;
    }

    RepMatrix out;
    out.rows = n;
    out.dim = keep;
    out.data.resize(n * keep);
    Eigen::Map<RowMat>(out.data.data(), static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(keep)) = centered * basis;
    return out;
}

FactorVaeResult factorvae_score(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                                Rng& rng, std::size_t votes_train, std::size_t votes_eval,
                                std::size_t vote_batch, double prune_std) {
    check_rows(rep, factors, "factorvae_score");
    if (vote_batch < 2) throw std::invalid_argument("factorvae_score: vote_batch too small");
    const std::size_t n = rep.rows, d = rep.dim;

    std::vector<double> sd(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double v = rep.at(r, j);
            s += v;
            s2 += v * v;
        }
        const double mean = s / static_cast<double>(n);
        sd[j] = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
    }
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < d; ++j)
        if (sd[j] >= prune_std) kept.push_back(j);
    if (kept.empty()) throw std::runtime_error("factorvae_score: collapsed representation");

    std::vector<std::vector<std::vector<std::size_t>>> buckets(kNumFactors);
    for (std::size_t k = 0; k < kNumFactors; ++k) buckets[k].resize(kFactorCards[k]);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < kNumFactors; ++k)
            buckets[k][static_cast<std::size_t>(factors[r].factor(k))].push_back(r);

    auto one_vote = [&](std::size_t& dim_out, std::size_t& factor_out) {
        const std::size_t k = rng.next() % kNumFactors;
        const std::size_t v = rng.next() % kFactorCards[k];
        const auto& bucket = buckets[k][v];
        if (bucket.empty()) throw std::runtime_error("factorvae_score: no rows share the drawn factor value");
        std::vector<double> s(kept.size(), 0.0), s2(kept.size(), 0.0);
        for (std::size_t b = 0; b < vote_batch; ++b) {
            const std::size_t row = bucket[rng.next() % bucket.size()];
            for (std::size_t j = 0; j < kept.size(); ++j) {
                const double x = rep.at(row, kept[j]);
                s[j] += x;
                s2[j] += x * x;
            }
        }
        std::size_t best = 0;
        double best_var = 1e300;
        const double nb = static_cast<double>(vote_batch);
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const double var = (s2[j] - s[j] * s[j] / nb) / (nb - 1.0);
            const double norm = var / (sd[kept[j]] * sd[kept[j]]);
            if (norm < best_var) {
                best_var = norm;
                best = kept[j];
            }
        }
        dim_out = best;
        factor_out = k;
    };

    FactorVaeResult out;
    out.dim = d;
    out.votes.assign(d * kNumFactors, 0);
    for (std::size_t t = 0; t < votes_train; ++t) {
        std::size_t dim = 0, k = 0;
        one_vote(dim, k);
        ++out.votes[dim * kNumFactors + k];
    }
    std::vector<std::size_t> majority(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < kNumFactors; ++k)
            if (out.votes[j * kNumFactors + k] > out.votes[j * kNumFactors + best]) best = k;
        majority[j] = best;
    }
    std::size_t correct = 0;
    for (std::size_t t = 0; t < votes_eval; ++t) {
        std::size_t dim = 0, k = 0;
        one_vote(dim, k);
        if (majority[dim] == k) ++correct;
    }
    out.score = static_cast<double>(correct) / static_cast<double>(votes_eval);
    return out;
}

double dci_from_importance(const std::vector<double>& importance, std::size_t dim,
                           std::size_t n_factors) {
    if (dim == 0 || n_factors < 2) throw std::invalid_argument("dci_from_importance: bad shape");
    if (importance.size() != dim * n_factors)
        throw std::invalid_argument("dci_from_importance: size mismatch");
    double total = 0.0;
    for (double v : importance) {
        if (v < 0.0) throw std::invalid_argument("dci_from_importance: negative importance");
        total += v;
    }
    if (total <= 0.0) throw std::runtime_error("dci_from_importance: all-zero importance");
    const double log_k = std::log(static_cast<double>(n_factors));
    double score = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        double row = 0.0;
        for (std::size_t k = 0; k < n_factors; ++k) row += importance[d * n_factors + k];
        if (row <= 0.0) continue;
        double entropy = 0.0;
        for (std::size_t k = 0; k < n_factors; ++k) {
            const double p = importance[d * n_factors + k] / row;
            if (p > 0.0) entropy -= p * std::log(p);
        }
        score += (row / total) * (1.0 - entropy / log_k);
    }
    return score;
}

DciResult dci_disentanglement(const RepMatrix& rep, const std::vector<SceneFactors>& factors,
                              double l1_strength) {
    check_rows(rep, factors, "dci_disentanglement");
    if (l1_strength <= 0.0) throw std::invalid_argument("dci_disentanglement: l1_strength must be positive");
    const std::size_t n = rep.rows, d = rep.dim;

    // standardized feature columns; constant dims stay all-zero
    std::vector<std::vector<double>> cols(d, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double v = rep.at(r, j);
            s += v;
            s2 += v * v;
        }
        const double mean = s / static_cast<double>(n);
        const double sd = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
        if (sd <= 1e-12) continue;
        for (std::size_t r = 0; r < n; ++r) cols[j][r] = (rep.at(r, j) - mean) / sd;
    }

    auto centered_target = [&](auto&& value) {
        std::vector<double> y(n);
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            y[r] = value(r);
            mean += y[r];
        }
        mean /= static_cast<double>(n);
        for (double& v : y) v -= mean;
        return y;
    };

    DciResult out;
    out.dim = d;
    out.importance.assign(d * kNumFactors, 0.0);
    for (std::size_t k = 0; k < kNumFactors; ++k) {
        if (k == 0) {
            // unordered shape: one-hot per class, importances summed
            for (int cls = 0; cls < static_cast<int>(kFactorCards[0]); ++cls) {
                const std::vector<double> w = lasso_fit(
                    cols,
                    centered_target([&](std::size_t r) { return factors[r].shape == cls ? 1.0 : 0.0; }),
                    l1_strength);
                for (std::size_t j = 0; j < d; ++j) out.importance[j * kNumFactors] += std::abs(w[j]);
            }
        } else {
            const std::vector<double> w = lasso_fit(
                cols,
                centered_target(
                    [&](std::size_t r) { return static_cast<double>(factors[r].factor(k)); }),
                l1_strength);
            for (std::size_t j = 0; j < d; ++j) out.importance[j * kNumFactors + k] = std::abs(w[j]);
        }
    }
    out.score = dci_from_importance(out.importance, d, kNumFactors);
    return out;
}

MigResult mig(const RepMatrix& rep, const std::vector<SceneFactors>& factors, std::size_t bins) {
    check_rows(rep, factors, "mig");
    if (bins < 2) throw std::invalid_argument("mig: need at least two bins");
    const std::size_t n = rep.rows, d = rep.dim;

    MigResult out;
    out.dim = d;
    out.mi.assign(d * kNumFactors, 0.0);
    std::vector<double> sorted(n);
    std::vector<std::size_t> bin_of(n);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t r = 0; r < n; ++r) sorted[r] = rep.at(r, j);
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> edges(bins - 1);
        for (std::size_t b = 1; b < bins; ++b) edges[b - 1] = sorted[b * n / bins];
        for (std::size_t r = 0; r < n; ++r) {
            const double x = rep.at(r, j);
            bin_of[r] = static_cast<std::size_t>(
                std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
        }
        for (std::size_t k = 0; k < kNumFactors; ++k) {
            const std::size_t card = kFactorCards[k];
            std::vector<double> joint(bins * card, 0.0), pb(bins, 0.0), pv(card, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const std::size_t v = static_cast<std::size_t>(factors[r].factor(k));
                joint[bin_of[r] * card + v] += 1.0;
            }
            double mi_val = 0.0;
            for (std::size_t b = 0; b < bins; ++b)
                for (std::size_t v = 0; v < card; ++v) pb[b] += joint[b * card + v];
            for (std::size_t v = 0; v < card; ++v)
                for (std::size_t b = 0; b < bins; ++b) pv[v] += joint[b * card + v];
            const double dn = static_cast<double>(n);
            for (std::size_t b = 0; b < bins; ++b)
                for (std::size_t v = 0; v < card; ++v) {
                    const double c = joint[b * card + v];
                    if (c > 0.0) mi_val += (c / dn) * std::log(c * dn / (pb[b] * pv[v]));
                }
            out.mi[j * kNumFactors + k] = mi_val;
        }
    }

    double score = 0.0;
    for (std::size_t k = 0; k < kNumFactors; ++k) {
        double top1 = -1.0, top2 = -1.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = out.mi[j * kNumFactors + k];
            if (v > top1) {
                top2 = top1;
                top1 = v;
            } else if (v > top2) {
                top2 = v;
            }
        }
        if (top2 < 0.0) top2 = 0.0;  // single-dim representation
        score += (top1 - top2) / std::log(static_cast<double>(kFactorCards[k]));
    }
    out.score = score / static_cast<double>(kNumFactors);
    return out;
}

std::vector<double> token_alignment(const MigResult& m, std::size_t factor_dim) {
    if (factor_dim == 0 || m.dim % factor_dim != 0)
        throw std::invalid_argument("token_alignment: dim is not a whole number of tokens");
    const std::size_t tokens = m.dim / factor_dim;
    std::vector<double> out(tokens * kNumFactors, 0.0);
    for (std::size_t j = 0; j < m.dim; ++j)
        for (std::size_t k = 0; k < kNumFactors; ++k)
            out[(j / factor_dim) * kNumFactors + k] += m.mi[j * kNumFactors + k];
    return out;
}

std::size_t best_token_for_factor(const std::vector<double>& alignment, std::size_t tokens,
                                  std::size_t factor) {
    if (factor >= kNumFactors || alignment.size() != tokens * kNumFactors || tokens == 0)
        throw std::invalid_argument("best_token_for_factor: bad arguments");
    std::size_t best = 0;
    for (std::size_t i = 1; i < tokens; ++i)
        if (alignment[i * kNumFactors + factor] > alignment[best * kNumFactors + factor]) best = i;
    return best;
}

MetricsReport evaluate_model(const BoundModel& m, bool reduce, std::uint64_t seed) {
    const RepMatrix rep = compute_representation(m, reduce);
    const std::vector<SceneFactors> factors = all_scene_factors();
    Rng rng(seed);
    MetricsReport report;
    report.factorvae = factorvae_score(rep, factors, rng);
    report.dci = dci_disentanglement(rep, factors);
    report.mig_result = mig(rep, factors);
    return report;
}

namespace {

void write_block(std::ofstream& os, const char* name, std::size_t rows, std::size_t cols,
                 const std::function<double(std::size_t, std::size_t)>& cell) {
    os << "\n[" << name << "] rows=" << rows << " cols=" << cols << "\n";
    char buf[40];
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", cell(r, c));
            os << buf << (c + 1 == cols ? "\n" : ",");
        }
    }
}

}  // namespace

void write_metrics_report(const std::string& path, const MetricsReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_metrics_report: cannot open " + path);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", report.factorvae.score);
    os << "factorvae_score: " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", report.dci.score);
    os << "dci_disentanglement: " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", report.mig_result.score);
    os << "mig: " << buf << "\n";
    write_block(os, "votes", report.factorvae.dim, kNumFactors, [&](std::size_t r, std::size_t c) {
        return static_cast<double>(report.factorvae.votes[r * kNumFactors + c]);
    });
    write_block(os, "importance", report.dci.dim, kNumFactors, [&](std::size_t r, std::size_t c) {
        return report.dci.importance[r * kNumFactors + c];
    });
    write_block(os, "mi", report.mig_result.dim, kNumFactors, [&](std::size_t r, std::size_t c) {
        return report.mig_result.mi[r * kNumFactors + c];
    });
    if (!os) throw std::runtime_error("write_metrics_report: write failed");
}

}  // namespace fdis
