#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fdis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace fdis;

namespace {

const std::vector<SceneFactors>& grid() {
    static const std::vector<SceneFactors> f = all_scene_factors();
    return f;
}

// dim j < 6 copies factor j; higher dims are gaussian noise
RepMatrix planted_rep(std::size_t noise_dims, std::uint64_t seed) {
    const auto& f = grid();
    RepMatrix rep;
    rep.rows = f.size();
    rep.dim = kNumFactors + noise_dims;
    rep.data.resize(rep.rows * rep.dim);
    Rng rng(seed);
    for (std::size_t r = 0; r < rep.rows; ++r) {
        for (std::size_t k = 0; k < kNumFactors; ++k)
            rep.at(r, k) = static_cast<double>(f[r].factor(k));
        for (std::size_t j = kNumFactors; j < rep.dim; ++j) rep.at(r, j) = rng.gaussian();
    }
    return rep;
}

RepMatrix noise_rep(std::size_t dims, std::uint64_t seed) {
    RepMatrix rep;
    rep.rows = grid().size();
    rep.dim = dims;
    rep.data.resize(rep.rows * dims);
    Rng rng(seed);
    for (double& v : rep.data) v = rng.gaussian();
    return rep;
}

ModelHyper toy_hyper() {
    ModelHyper h;
    h.latent_tokens = 4;
    h.latent_channels = 2;
    h.factor_tokens = 3;
    h.factor_dim = 4;
    h.hidden_dim = 8;
    h.blocks = 1;
    h.key_dim = 4;
    h.time_dim = 4;
    h.pos_dim = 2;
    h.enc_hidden = 12;
    h.image_dim = kImageDim;
    return h;
}

}  // namespace

TEST_CASE("a planted representation earns a perfect factorvae score") {
    const RepMatrix rep = planted_rep(2, 17);
    Rng rng(4);
    const FactorVaeResult r = factorvae_score(rep, grid(), rng);
    CHECK(r.score == 1.0);
    // every training vote lands on the matching dim
    for (std::size_t k = 0; k < kNumFactors; ++k)
        for (std::size_t j = 0; j < rep.dim; ++j)
            if (j != k) CHECK(r.votes[j * kNumFactors + k] == 0);
}

TEST_CASE("factorvae on noise sits at chance") {
    const RepMatrix rep = noise_rep(8, 99);
    Rng rng(12);
    const FactorVaeResult r = factorvae_score(rep, grid(), rng);
    CHECK(std::abs(r.score - 1.0 / 6.0) <= 0.05);
}

TEST_CASE("a confounded representation scores below perfect") {
    const auto& f = grid();
    RepMatrix rep;
    rep.rows = f.size();
    rep.dim = 5;
    rep.data.resize(rep.rows * rep.dim);
    Rng rng(31);
    for (std::size_t r = 0; r < rep.rows; ++r) {
        rep.at(r, 0) = 3.0 * f[r].factor(0) + f[r].factor(1);  // two factors, one dim
        rep.at(r, 1) = static_cast<double>(f[r].factor(2));
        rep.at(r, 2) = static_cast<double>(f[r].factor(3));
        rep.at(r, 3) = static_cast<double>(f[r].factor(4));
        rep.at(r, 4) = rng.gaussian();  // factor 5 is absent entirely
    }
    Rng vote_rng(8);
    const FactorVaeResult r = factorvae_score(rep, grid(), vote_rng);
    CHECK(r.score < 1.0);
    CHECK(r.score > 0.3);
}

TEST_CASE("factorvae prunes dead dims and rejects a collapsed representation") {
    const auto& f = grid();
    RepMatrix rep;
    rep.rows = f.size();
    rep.dim = kNumFactors + 1;
    rep.data.assign(rep.rows * rep.dim, 0.123);  // last dim stays constant
    for (std::size_t r = 0; r < rep.rows; ++r)
        for (std::size_t k = 0; k < kNumFactors; ++k)
            rep.at(r, k) = static_cast<double>(f[r].factor(k));
    Rng rng(4);
    CHECK(factorvae_score(rep, grid(), rng).score == 1.0);

    RepMatrix flat;
    flat.rows = grid().size();
    flat.dim = 3;
    flat.data.assign(flat.rows * 3, 7.0);
    Rng rng2(4);
    CHECK_THROWS_AS(factorvae_score(flat, grid(), rng2), std::runtime_error);
}

TEST_CASE("factorvae is invariant to per-dim affine rescaling") {
    // scales keep every dim's std above the prune threshold; shrinking a dim
    // below it changes what survives pruning, which is outside the invariance
    const RepMatrix rep = planted_rep(2, 23);
    RepMatrix scaled = rep;
    const double a[8] = {3.0, -0.5, 12.0, 0.1, -7.0, 2.5, 100.0, -0.125};
    const double b[8] = {1.0, -4.0, 0.0, 9.0, 2.0, -1.0, 0.5, 3.0};
    for (std::size_t r = 0; r < rep.rows; ++r)
        for (std::size_t j = 0; j < rep.dim; ++j) scaled.at(r, j) = a[j] * rep.at(r, j) + b[j];
    Rng r1(5), r2(5);
    const FactorVaeResult plain = factorvae_score(rep, grid(), r1);
    const FactorVaeResult affine = factorvae_score(scaled, grid(), r2);
    CHECK(plain.score == affine.score);
    CHECK(plain.votes == affine.votes);
}

TEST_CASE("dci_from_importance matches hand computations") {
    // identity: every dim explains exactly one factor
    std::vector<double> eye(6 * 6, 0.0);
    for (std::size_t i = 0; i < 6; ++i) eye[i * 6 + i] = 2.0;
    CHECK(dci_from_importance(eye, 6, 6) == doctest::Approx(1.0).epsilon(1e-14));

    // uniform rows: maximal entropy
    const std::vector<double> uniform(4 * 3, 0.7);
    CHECK(dci_from_importance(uniform, 4, 3) == doctest::Approx(0.0).epsilon(1e-12));

    // hand-built 4x3 matrix against the formula written out longhand
    const std::vector<double> hand{1.0, 0.0, 0.0,  //
                                   0.0, 2.0, 0.0,  //
                                   1.0, 1.0, 0.0,  //
                                   0.0, 0.0, 4.0};
    const double mixed_row = 1.0 - std::log(2.0) / std::log(3.0);
    const double expected = (1.0 + 2.0 + 4.0) / 9.0 + (2.0 / 9.0) * mixed_row;
    CHECK(dci_from_importance(hand, 4, 3) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("dci_from_importance validates its inputs") {
    CHECK_THROWS_AS(dci_from_importance(std::vector<double>(12, 0.0), 4, 3), std::runtime_error);
    CHECK_THROWS_AS(dci_from_importance({1.0, -0.5, 0.0}, 1, 3), std::invalid_argument);
    CHECK_THROWS_AS(dci_from_importance({1.0, 2.0}, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(dci_from_importance({1.0, 2.0}, 2, 1), std::invalid_argument);
}

TEST_CASE("dci concentrates importance on a planted representation") {
    const RepMatrix rep = planted_rep(2, 41);
    const DciResult r = dci_disentanglement(rep, grid());
    CHECK(r.score >= 0.95);
    CHECK(r.score <= 1.0);
    // numeric factors: own-dim importance dwarfs everything else in the row
    for (std::size_t k = 1; k < kNumFactors; ++k) {
        const double own = r.importance[k * kNumFactors + k];
        CHECK(own > 0.1);
        for (std::size_t j = 0; j < kNumFactors; ++j)
            if (j != k) CHECK(r.importance[k * kNumFactors + j] < own * 0.05);
    }
}

TEST_CASE("mig is exact on planted factor copies") {
    const RepMatrix rep = planted_rep(0, 3);
    const MigResult r = mig(rep, grid());
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 0; k < kNumFactors; ++k) {
        const double own = r.mi[k * kNumFactors + k];
        CHECK(own == doctest::Approx(std::log(double(kFactorCards[k]))).epsilon(1e-12));
        for (std::size_t j = 0; j < kNumFactors; ++j)
            if (j != k) CHECK(std::abs(r.mi[j * kNumFactors + k]) < 1e-12);
    }
}

TEST_CASE("mig on noise is near zero") {
    const RepMatrix rep = noise_rep(6, 77);
    const MigResult r = mig(rep, grid());
    CHECK(std::abs(r.score) <= 0.05);
}

TEST_CASE("duplicating a factor erases its gap") {
    const auto& f = grid();
    RepMatrix rep;
    rep.rows = f.size();
    rep.dim = kNumFactors + 1;
    rep.data.resize(rep.rows * rep.dim);
    for (std::size_t r = 0; r < rep.rows; ++r) {
        for (std::size_t k = 0; k < kNumFactors; ++k)
            rep.at(r, k) = static_cast<double>(f[r].factor(k));
        rep.at(r, kNumFactors) = static_cast<double>(f[r].factor(0));  // factor 0 twice
    }
    const MigResult r = mig(rep, grid());
    CHECK(r.score == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("a constant dim carries zero mutual information without erroring") {
    RepMatrix rep = planted_rep(0, 5);
    for (std::size_t r = 0; r < rep.rows; ++r) rep.at(r, 2) = 4.25;
    const MigResult r = mig(rep, grid());
    for (std::size_t k = 0; k < kNumFactors; ++k) CHECK(r.mi[2 * kNumFactors + k] == 0.0);
}

TEST_CASE("all three metrics ignore dimension permutations") {
    const RepMatrix rep = planted_rep(2, 53);
    const std::size_t d = rep.dim;
    const std::size_t perm[8] = {5, 2, 7, 0, 3, 6, 1, 4};
    RepMatrix shuffled;
    shuffled.rows = rep.rows;
    shuffled.dim = d;
    shuffled.data.resize(rep.data.size());
    for (std::size_t r = 0; r < rep.rows; ++r)
        for (std::size_t j = 0; j < d; ++j) shuffled.at(r, perm[j]) = rep.at(r, j);

    Rng r1(9), r2(9);
    CHECK(factorvae_score(rep, grid(), r1).score == factorvae_score(shuffled, grid(), r2).score);
    CHECK(dci_disentanglement(rep, grid()).score ==
          doctest::Approx(dci_disentanglement(shuffled, grid()).score).epsilon(1e-10));
    CHECK(mig(rep, grid()).score == doctest::Approx(mig(shuffled, grid()).score).epsilon(1e-12));
}

TEST_CASE("mig is invariant to strictly monotone transforms") {
    const RepMatrix rep = planted_rep(2, 61);
    RepMatrix cubed = rep;
    for (double& v : cubed.data) v = v * v * v;
    const MigResult a = mig(rep, grid());
    const MigResult b = mig(cubed, grid());
    CHECK(a.mi == b.mi);
    CHECK(a.score == b.score);
}

TEST_CASE("factorvae is deterministic in the seed") {
    const RepMatrix rep = planted_rep(3, 71);
    Rng r1(100), r2(100);
    const FactorVaeResult a = factorvae_score(rep, grid(), r1);
    const FactorVaeResult b = factorvae_score(rep, grid(), r2);
    CHECK(a.score == b.score);
    CHECK(a.votes == b.votes);
}

TEST_CASE("metric inputs are validated") {
    RepMatrix rep = planted_rep(0, 1);
    std::vector<SceneFactors> short_factors(grid().begin(), grid().begin() + 10);
    Rng rng(1);
    CHECK_THROWS_AS(factorvae_score(rep, short_factors, rng), std::invalid_argument);
    CHECK_THROWS_AS(dci_disentanglement(rep, short_factors), std::invalid_argument);
    CHECK_THROWS_AS(mig(rep, short_factors), std::invalid_argument);
    CHECK_THROWS_AS(mig(rep, grid(), 1), std::invalid_argument);
    CHECK_THROWS_AS(dci_disentanglement(rep, grid(), 0.0), std::invalid_argument);
    RepMatrix empty;
    CHECK_THROWS_AS(mig(empty, grid()), std::invalid_argument);
}

TEST_CASE("token alignment sums per-token mi and picks the argmax") {
    MigResult m;
    m.dim = 4;
    m.mi.assign(4 * kNumFactors, 0.0);
    m.mi[0 * kNumFactors + 2] = 0.3;  // token 0 = dims {0,1}
    m.mi[1 * kNumFactors + 2] = 0.4;
    m.mi[2 * kNumFactors + 2] = 0.5;  // token 1 = dims {2,3}
    m.mi[3 * kNumFactors + 1] = 0.9;
    const std::vector<double> align = token_alignment(m, 2);
    REQUIRE(align.size() == 2 * kNumFactors);
    CHECK(align[0 * kNumFactors + 2] == doctest::Approx(0.7));
    CHECK(align[1 * kNumFactors + 2] == doctest::Approx(0.5));
    CHECK(align[1 * kNumFactors + 1] == doctest::Approx(0.9));
    CHECK(best_token_for_factor(align, 2, 2) == 0);
    CHECK(best_token_for_factor(align, 2, 1) == 1);
    CHECK_THROWS_AS(token_alignment(m, 3), std::invalid_argument);
    CHECK_THROWS_AS(best_token_for_factor(align, 2, kNumFactors), std::invalid_argument);
}

TEST_CASE("compute_representation is deterministic and matches the single-image path") {
    const ModelHyper h = toy_hyper();
    const ModelParams params = ModelParams::init(h, 77);
    const BoundModel m = bind_constants(params);

    const RepMatrix rep = compute_representation(m, false);
    CHECK(rep.rows == kSceneCount);
    CHECK(rep.dim == h.factor_tokens * h.factor_dim);

    const RepMatrix again = compute_representation(m, false);
    CHECK(rep.data == again.data);

    for (std::size_t scene : {std::size_t{0}, std::size_t{300}, kSceneCount - 1}) {
        const std::vector<double> one = factor_tokens(m, render_scene(scene_factors(scene)));
        REQUIRE(one.size() == rep.dim);
        for (std::size_t j = 0; j < rep.dim; ++j)
            CHECK(rep.at(scene, j) == doctest::Approx(one[j]).epsilon(1e-9));
    }
}

TEST_CASE("reduced representations order variance by dimension") {
    const ModelHyper h = toy_hyper();
    const BoundModel m = bind_constants(ModelParams::init(h, 78));
    const RepMatrix rep = compute_representation(m, true);
    CHECK(rep.rows == kSceneCount);
    CHECK(rep.dim == h.factor_tokens);
    std::vector<double> var(rep.dim, 0.0);
    for (std::size_t j = 0; j < rep.dim; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t r = 0; r < rep.rows; ++r) {
            s += rep.at(r, j);
            s2 += rep.at(r, j) * rep.at(r, j);
        }
        var[j] = s2 / rep.rows - (s / rep.rows) * (s / rep.rows);
    }
    for (std::size_t j = 1; j < rep.dim; ++j) CHECK(var[j] <= var[j - 1] * (1.0 + 1e-12));
    // centering: reduced dims have zero mean
    for (std::size_t j = 0; j < rep.dim; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rep.rows; ++r) s += rep.at(r, j);
        CHECK(std::abs(s / rep.rows) < 1e-9);
    }
}

TEST_CASE("the metrics report round-trips through its text form") {
    MetricsReport report;
    report.factorvae.score = 0.875;
    report.factorvae.dim = 2;
    report.factorvae.votes.assign(2 * kNumFactors, 3);
    report.dci.score = 0.5;
    report.dci.dim = 2;
    report.dci.importance.assign(2 * kNumFactors, 0.25);
    report.mig_result.score = 0.125;
    report.mig_result.dim = 2;
    report.mig_result.mi.assign(2 * kNumFactors, 0.0625);

    const std::string path =
        (std::filesystem::temp_directory_path() / "fdis_metrics_report.txt").string();
    write_metrics_report(path, report);
    std::ifstream is(path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::filesystem::remove(path);
    CHECK(text.find("factorvae_score: 0.875") != std::string::npos);
    CHECK(text.find("dci_disentanglement: 0.5") != std::string::npos);
    CHECK(text.find("mig: 0.125") != std::string::npos);
    CHECK(text.find("[votes] rows=2 cols=6") != std::string::npos);
    CHECK(text.find("[importance] rows=2 cols=6") != std::string::npos);
    CHECK(text.find("[mi] rows=2 cols=6") != std::string::npos);
    CHECK(text.find("0.0625") != std::string::npos);
}
