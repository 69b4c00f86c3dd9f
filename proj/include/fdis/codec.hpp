#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fdis {

// Deterministic PCA latent codec: the latent grid a pretrained image
// tokenizer would normally provide, rebuilt as whitened principal components
// of the full scene set. encode lays the D = tokens*channels coordinates out
// row-major as a (tokens x channels) latent grid.

struct LatentCodec {
    std::size_t input_dim = 0;     // flattened image size
    std::size_t tokens = 0;        // M
    std::size_t channels = 0;      // d
    std::vector<double> mean;      // input_dim
    std::vector<double> basis;     // latent_dim x input_dim, one component per row
    std::vector<double> scale;     // latent_dim, sigma_j / sqrt(n-1); divides on encode

    std::size_t latent_dim() const { return tokens * channels; }
};

// Fits on all scenes in factor-lexicographic order. Component signs follow a
// fixed convention (the largest-magnitude coordinate of each basis row is
// positive; first occurrence wins ties) so refits are bit-reproducible.
LatentCodec fit_codec(std::size_t tokens, std::size_t channels);

std::vector<double> encode_latent(const LatentCodec& codec, const std::vector<double>& image);
// Decoded pixels are clamped to [0, 1].
std::vector<double> decode_latent(const LatentCodec& codec, const std::vector<double>& latent);

// Encodes every scene (row s = scene index s); used to precompute training
// targets and metric inputs.
std::vector<double> encode_all_scenes(const LatentCodec& codec);

void save_codec(const std::string& path, const LatentCodec& codec);
LatentCodec load_codec(const std::string& path);

}  // namespace fdis
