#include "fdis/codec.hpp"

#include "fdis/dataset.hpp"
#include "fdis/io.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fdis {

namespace {

constexpr std::size_t kFitBlock = 512;

// Streams all scenes through a block buffer: returns the column mean and the
// (n-1)-normalized covariance without ever holding the full data matrix.
void accumulate_moments(Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    const auto n = static_cast<Eigen::Index>(kSceneCount);
    const auto p = static_cast<Eigen::Index>(kImageDim);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd block(kFitBlock, p);
    std::vector<double> img(kImageDim);
    std::size_t filled = 0;
    auto flush = [&](std::size_t rows) {
        if (rows == 0) return;
        auto top = block.topRows(static_cast<Eigen::Index>(rows));
        second.selfadjointView<Eigen::Lower>().rankUpdate(top.transpose(), 1.0);
        total += top.colwise().sum();
    };
    for (std::size_t s = 0; s < kSceneCount; ++s) {
        render_scene(scene_factors(s), img.data());
        for (std::size_t j = 0; j < kImageDim; ++j) block(static_cast<Eigen::Index>(filled), static_cast<Eigen::Index>(j)) = img[j];
        if (++filled == kFitBlock) {
            flush(filled);
            filled = 0;
        }
    }
    flush(filled);
    second.triangularView<Eigen::Upper>() = second.transpose();
    mean = total / static_cast<double>(n);
    cov = (second - static_cast<double>(n) * mean * mean.transpose()) / static_cast<double>(n - 1);
}

void fix_sign(Eigen::VectorXd& v) {
    Eigen::Index arg = 0;
    double best = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > best) {
            best = a;
            arg = i;
        }
    }
    if (v[arg] < 0.0) v = -v;
}

}  // namespace

LatentCodec fit_codec(std::size_t tokens, std::size_t channels) {
    const std::size_t latent = tokens * channels;
    if (latent == 0 || latent > kImageDim) throw std::invalid_argument("fit_codec: bad latent size");

    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    accumulate_moments(mean, cov);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw std::runtime_error("fit_codec: eigensolver failed");

    LatentCodec codec;
    codec.input_dim = kImageDim;
    codec.tokens = tokens;
    codec.channels = channels;
    codec.mean.assign(mean.data(), mean.data() + mean.size());
    codec.basis.resize(latent * kImageDim);
    codec.scale.resize(latent);
    const Eigen::Index p = static_cast<Eigen::Index>(kImageDim);
    for (std::size_t j = 0; j < latent; ++j) {
        const Eigen::Index col = p - 1 - static_cast<Eigen::Index>(j);  // eigenvalues ascend
        Eigen::VectorXd v = es.eigenvectors().col(col);
        fix_sign(v);
        const double lambda = es.eigenvalues()[col];
        if (!(lambda > 0.0))
            throw std::runtime_error("fit_codec: non-positive variance at component " + std::to_string(j));
        codec.scale[j] = std::sqrt(lambda);
        for (Eigen::Index i = 0; i < p; ++i) codec.basis[j * kImageDim + static_cast<std::size_t>(i)] = v[i];
    }
    return codec;
}

std::vector<double> encode_latent(const LatentCodec& codec, const std::vector<double>& image) {
    if (image.size() != codec.input_dim) throw std::invalid_argument("encode_latent: wrong image size");
    const std::size_t latent = codec.latent_dim();
    std::vector<double> z(latent);
    for (std::size_t j = 0; j < latent; ++j) {
        const double* b = codec.basis.data() + j * codec.input_dim;
        double s = 0.0;
        for (std::size_t i = 0; i < codec.input_dim; ++i) s += b[i] * (image[i] - codec.mean[i]);
        z[j] = s / codec.scale[j];
    }
    return z;
}

std::vector<double> decode_latent(const LatentCodec& codec, const std::vector<double>& latent) {
    if (latent.size() != codec.latent_dim()) throw std::invalid_argument("decode_latent: wrong latent size");
    std::vector<double> img(codec.mean);
    for (std::size_t j = 0; j < latent.size(); ++j) {
        const double c = latent[j] * codec.scale[j];
        const double* b = codec.basis.data() + j * codec.input_dim;
        for (std::size_t i = 0; i < codec.input_dim; ++i) img[i] += c * b[i];
    }
    for (double& v : img) v = std::min(1.0, std::max(0.0, v));
    return img;
}

std::vector<double> encode_all_scenes(const LatentCodec& codec) {
    const std::size_t latent = codec.latent_dim();
    std::vector<double> out(kSceneCount * latent);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> basis(
        codec.basis.data(), static_cast<Eigen::Index>(latent), static_cast<Eigen::Index>(codec.input_dim));
    Eigen::Map<const Eigen::VectorXd> mean(codec.mean.data(), static_cast<Eigen::Index>(codec.input_dim));
    Eigen::MatrixXd block(kFitBlock, codec.input_dim);
    std::vector<double> img(kImageDim);
    std::size_t row = 0;
    while (row < kSceneCount) {
        const std::size_t rows = std::min(kFitBlock, kSceneCount - row);
        for (std::size_t r = 0; r < rows; ++r) {
            render_scene(scene_factors(row + r), img.data());
            for (std::size_t j = 0; j < kImageDim; ++j)
                block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = img[j];
        }
        auto top = block.topRows(static_cast<Eigen::Index>(rows));
        Eigen::MatrixXd proj = (top.rowwise() - mean.transpose()) * basis.transpose();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < latent; ++j)
                out[(row + r) * latent + j] = proj(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) / codec.scale[j];
        row += rows;
    }
    return out;
}

void save_codec(const std::string& path, const LatentCodec& codec) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("codec: cannot open " + path + " for writing");
    write_magic(os);
    write_u32(os, static_cast<std::uint32_t>(kNumFactors));
    for (std::size_t c : kFactorCards) write_u32(os, static_cast<std::uint32_t>(c));
    write_u32(os, static_cast<std::uint32_t>(codec.input_dim));
    write_u32(os, static_cast<std::uint32_t>(codec.tokens));
    write_u32(os, static_cast<std::uint32_t>(codec.channels));
    write_f64_array(os, codec.mean);
    write_f64_array(os, codec.basis);
    write_f64_array(os, codec.scale);
    os.flush();
    if (!os) throw std::runtime_error("codec: write failed for " + path);
}

LatentCodec load_codec(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("codec: cannot open " + path);
    read_magic(is, "codec");
    const std::uint32_t nf = read_u32(is);
    if (nf != kNumFactors) throw std::runtime_error("codec: factor count mismatch");
    for (std::size_t c : kFactorCards)
        if (read_u32(is) != c) throw std::runtime_error("codec: factor cardinality mismatch");
    LatentCodec codec;
    codec.input_dim = read_u32(is);
    codec.tokens = read_u32(is);
    codec.channels = read_u32(is);
    if (codec.input_dim != kImageDim || codec.latent_dim() == 0 || codec.latent_dim() > codec.input_dim)
        throw std::runtime_error("codec: implausible dimensions");
    codec.mean = read_f64_array(is, codec.input_dim);
    codec.basis = read_f64_array(is, codec.latent_dim() * codec.input_dim);
    codec.scale = read_f64_array(is, codec.latent_dim());
    return codec;
}

}  // namespace fdis
