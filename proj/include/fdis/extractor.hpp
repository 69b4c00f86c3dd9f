#pragma once

#include "fdis/dataset.hpp"

#include <array>
#include <optional>
#include <vector>

namespace fdis {

// Analytic attribute recovery from a rendered (or generated) image. Object
// and background colors are estimated by nearest-palette-color majority vote,
// then every candidate (shape, scale, x, y) placement is scored by summing a
// per-pixel objectness |I - bg|^2 - |I - obj|^2 over its exact clipped
// footprint; the argmax equals L2 template matching at the estimated colors.
// Hue and background are re-voted over the winning footprint and its
// complement. Exact on clean renders, and the template score stays stable
// under the edge blur that decoded latents produce, where bbox or pixel-count
// statistics do not.
//
// Returns nullopt when no pixel classifies as object, or when the best
// placement explains the image no better than pure background ("no object").
std::optional<SceneFactors> extract_attributes(const std::vector<double>& image);

// Strict swap scoring: the intended factor must match the target scene and
// every other factor must match the source scene, all via extraction.
struct SwapReport {
    bool extraction_ok = false;       // all three extractions found an object
    bool success = false;
    std::array<bool, kNumFactors> factor_ok{};
};

SwapReport swap_fidelity(const std::vector<double>& source_image,
                         const std::vector<double>& target_image,
                         const std::vector<double>& swapped_image,
                         std::size_t intended_factor);

}  // namespace fdis
