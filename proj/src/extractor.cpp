#include "fdis/extractor.hpp"

#include <cstdint>
#include <stdexcept>

namespace fdis {

namespace {

struct Footprint {
    SceneFactors factors;     // hue/bg left at zero
    std::vector<int> pixels;  // flat row-major indices inside the clipped footprint
};

const std::vector<Footprint>& footprint_table() {
    static const std::vector<Footprint> table = [] {
        std::vector<Footprint> t;
        t.reserve(3 * 4 * 8 * 8);
        const int n = static_cast<int>(kImageSize);
        for (int shape = 0; shape < 3; ++shape)
            for (int scale = 0; scale < 4; ++scale)
                for (int x = 0; x < 8; ++x)
                    for (int y = 0; y < 8; ++y) {
                        Footprint f{SceneFactors{shape, scale, x, y, 0, 0}, {}};
                        const double cx = grid_center(x);
                        const double cy = grid_center(y);
                        const double e = half_extent(scale);
                        for (int py = 0; py < n; ++py)
                            for (int px = 0; px < n; ++px)
                                if (inside_shape(static_cast<ShapeKind>(shape), px + 0.5 - cx,
                                                 py + 0.5 - cy, e))
                                    f.pixels.push_back(py * n + px);
                        t.push_back(std::move(f));
                    }
        return t;
    }();
    return table;
}

double dist2(const double* rgb, const std::array<double, 3>& c) {
    double d = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        const double diff = rgb[ch] - c[static_cast<std::size_t>(ch)];
        d += diff * diff;
    }
    return d;
}

}  // namespace

std::optional<SceneFactors> extract_attributes(const std::vector<double>& image) {
    if (image.size() != kImageDim)
        throw std::invalid_argument("extract_attributes: expected a 32x32x3 image");

    const int npix = static_cast<int>(kImageSize * kImageSize);
    std::vector<int> nearest_obj(static_cast<std::size_t>(npix));
    std::vector<int> nearest_bg(static_cast<std::size_t>(npix));
    std::array<int, 6> hue_votes{};
    std::array<int, 4> bg_votes{};
    bool any_object = false;
    for (int i = 0; i < npix; ++i) {
        const double* rgb = image.data() + 3 * i;
        int bo = 0, bb = 0;
        double bod = dist2(rgb, object_color(0));
        double bbd = dist2(rgb, background_color(0));
        for (int k = 1; k < 6; ++k) {
            const double d = dist2(rgb, object_color(k));
            if (d < bod) {
                bod = d;
                bo = k;
            }
        }
        for (int k = 1; k < 4; ++k) {
            const double d = dist2(rgb, background_color(k));
            if (d < bbd) {
                bbd = d;
                bb = k;
            }
        }
        nearest_obj[static_cast<std::size_t>(i)] = bo;
        nearest_bg[static_cast<std::size_t>(i)] = bb;
        if (bod < bbd) {
            ++hue_votes[static_cast<std::size_t>(bo)];
            any_object = true;
        } else {
            ++bg_votes[static_cast<std::size_t>(bb)];
        }
    }
    if (!any_object) return std::nullopt;

    int hue0 = 0, bg0 = 0;
    for (int k = 1; k < 6; ++k)
        if (hue_votes[static_cast<std::size_t>(k)] > hue_votes[static_cast<std::size_t>(hue0)]) hue0 = k;
    for (int k = 1; k < 4; ++k)
        if (bg_votes[static_cast<std::size_t>(k)] > bg_votes[static_cast<std::size_t>(bg0)]) bg0 = k;

    const auto oc = object_color(hue0);
    const auto bc = background_color(bg0);
    std::vector<double> objectness(static_cast<std::size_t>(npix));
    for (int i = 0; i < npix; ++i)
        objectness[static_cast<std::size_t>(i)] = dist2(image.data() + 3 * i, bc) - dist2(image.data() + 3 * i, oc);

    const Footprint* best = nullptr;
    double best_score = 0.0;
    for (const Footprint& f : footprint_table()) {
        double s = 0.0;
        for (int p : f.pixels) s += objectness[static_cast<std::size_t>(p)];
        if (!best || s > best_score) {
            best = &f;
            best_score = s;
        }
    }
    if (best_score <= 0.0) return std::nullopt;

    std::vector<std::uint8_t> inside(static_cast<std::size_t>(npix), 0);
    for (int p : best->pixels) inside[static_cast<std::size_t>(p)] = 1;
    std::array<int, 6> hue_refine{};
    std::array<int, 4> bg_refine{};
    for (int i = 0; i < npix; ++i) {
        if (inside[static_cast<std::size_t>(i)])
            ++hue_refine[static_cast<std::size_t>(nearest_obj[static_cast<std::size_t>(i)])];
        else
            ++bg_refine[static_cast<std::size_t>(nearest_bg[static_cast<std::size_t>(i)])];
    }

    SceneFactors out = best->factors;
    out.hue = 0;
    out.bg = 0;
    for (int k = 1; k < 6; ++k)
        if (hue_refine[static_cast<std::size_t>(k)] > hue_refine[static_cast<std::size_t>(out.hue)]) out.hue = k;
    for (int k = 1; k < 4; ++k)
        if (bg_refine[static_cast<std::size_t>(k)] > bg_refine[static_cast<std::size_t>(out.bg)]) out.bg = k;
    return out;
}

SwapReport swap_fidelity(const std::vector<double>& source_image,
                         const std::vector<double>& target_image,
                         const std::vector<double>& swapped_image,
                         std::size_t intended_factor) {
    if (intended_factor >= kNumFactors)
        throw std::invalid_argument("swap_fidelity: factor index out of range");
    SwapReport report;
    const auto src = extract_attributes(source_image);
    const auto tgt = extract_attributes(target_image);
    const auto swp = extract_attributes(swapped_image);
    if (!src || !tgt || !swp) return report;  // extraction failure counts as leakage failure
    report.extraction_ok = true;
    report.success = true;
    for (std::size_t k = 0; k < kNumFactors; ++k) {
        const int want = k == intended_factor ? tgt->factor(k) : src->factor(k);
        report.factor_ok[k] = swp->factor(k) == want;
        report.success = report.success && report.factor_ok[k];
    }
    return report;
}

}  // namespace fdis
