#include "fdis/dataset.hpp"

#include "fdis/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fdis {

int SceneFactors::factor(std::size_t i) const {
    switch (i) {
        case 0: return shape;
        case 1: return scale;
        case 2: return x;
        case 3: return y;
        case 4: return hue;
        case 5: return bg;
    }
    throw std::out_of_range("factor index");
}

std::size_t scene_index(const SceneFactors& f) {
    std::size_t idx = 0;
    const int vals[6] = {f.shape, f.scale, f.x, f.y, f.hue, f.bg};
    for (std::size_t i = 0; i < 6; ++i) {
        if (vals[i] < 0 || vals[i] >= static_cast<int>(kFactorCards[i]))
            throw std::invalid_argument("scene_index: factor " + std::to_string(i) + " out of range");
        idx = idx * kFactorCards[i] + static_cast<std::size_t>(vals[i]);
    }
    return idx;
}

SceneFactors scene_factors(std::size_t index) {
    if (index >= kSceneCount) throw std::invalid_argument("scene_factors: index out of range");
    SceneFactors f;
    f.bg = static_cast<int>(index % 4); index /= 4;
    f.hue = static_cast<int>(index % 6); index /= 6;
    f.y = static_cast<int>(index % 8); index /= 8;
    f.x = static_cast<int>(index % 8); index /= 8;
    f.scale = static_cast<int>(index % 4); index /= 4;
    f.shape = static_cast<int>(index);
    return f;
}

bool inside_square(double dx, double dy, double e) {
    return dx >= -e && dx < e && dy >= -e && dy < e;
}

bool inside_disc(double dx, double dy, double e) {
    return dx * dx + dy * dy <= e * e;
}

bool inside_triangle(double dx, double dy, double e) {
    const double depth = dy + e;  // 0 at the apex row
    return depth >= 0.0 && depth < 2.0 * e && 2.0 * std::abs(dx) <= depth;
}

bool inside_shape(ShapeKind kind, double dx, double dy, double e) {
    switch (kind) {
        case ShapeKind::kSquare: return inside_square(dx, dy, e);
        case ShapeKind::kDisc: return inside_disc(dx, dy, e);
        case ShapeKind::kTriangle: return inside_triangle(dx, dy, e);
    }
    return false;
}

ShapeSignature shape_signature(ShapeKind kind, int scale, int x, int y) {
    const double cx = grid_center(x);
    const double cy = grid_center(y);
    const double e = half_extent(scale);
    ShapeSignature sig;
    int min_x = static_cast<int>(kImageSize), max_x = -1;
    int min_y = static_cast<int>(kImageSize), max_y = -1;
    for (int py = 0; py < static_cast<int>(kImageSize); ++py) {
        const double dy = (py + 0.5) - cy;
        for (int px = 0; px < static_cast<int>(kImageSize); ++px) {
            const double dx = (px + 0.5) - cx;
            if (!inside_shape(kind, dx, dy, e)) continue;
            min_x = std::min(min_x, px);
            max_x = std::max(max_x, px);
            min_y = std::min(min_y, py);
            max_y = std::max(max_y, py);
            ++sig.count;
        }
    }
    sig.min_x = min_x;
    sig.min_y = min_y;
    sig.width = max_x - min_x + 1;
    sig.height = max_y - min_y + 1;
    return sig;
}

std::array<double, 3> hsv_to_rgb(double h_deg, double s, double v) {
    double h = std::fmod(h_deg, 360.0);
    if (h < 0.0) h += 360.0;
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0.0, g = 0.0, b = 0.0;
    if (hp < 1.0) { r = c; g = x; }
    else if (hp < 2.0) { r = x; g = c; }
    else if (hp < 3.0) { g = c; b = x; }
    else if (hp < 4.0) { g = x; b = c; }
    else if (hp < 5.0) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

std::array<double, 3> object_color(int hue_idx) {
    return hsv_to_rgb(object_hue_deg(hue_idx), 0.9, 0.9);
}

std::array<double, 3> background_color(int bg_idx) {
    return hsv_to_rgb(background_hue_deg(bg_idx), 0.3, 0.6);
}

void render_scene(const SceneFactors& f, double* out) {
    const std::array<double, 3> obj = object_color(f.hue);
    const std::array<double, 3> bg = background_color(f.bg);
    const double cx = grid_center(f.x);
    const double cy = grid_center(f.y);
    const double e = half_extent(f.scale);
    const ShapeKind kind = static_cast<ShapeKind>(f.shape);
    for (std::size_t py = 0; py < kImageSize; ++py) {
        const double dy = (static_cast<double>(py) + 0.5) - cy;
        for (std::size_t px = 0; px < kImageSize; ++px) {
            const double dx = (static_cast<double>(px) + 0.5) - cx;
            const std::array<double, 3>& color = inside_shape(kind, dx, dy, e) ? obj : bg;
            double* p = out + (py * kImageSize + px) * kImageChannels;
            p[0] = color[0];
            p[1] = color[1];
            p[2] = color[2];
        }
    }
}

std::vector<double> render_scene(const SceneFactors& f) {
    std::vector<double> out(kImageDim);
    render_scene(f, out.data());
    return out;
}

// ==================== dataset cache ====================

namespace {

std::string cache_header_bytes() {
    std::ostringstream os(std::ios::binary);
    write_magic(os);
    write_u32(os, static_cast<std::uint32_t>(kNumFactors));
    for (std::size_t c : kFactorCards) write_u32(os, static_cast<std::uint32_t>(c));
    write_u32(os, static_cast<std::uint32_t>(kImageSize));
    write_u32(os, static_cast<std::uint32_t>(kImageSize));
    write_u32(os, static_cast<std::uint32_t>(kImageChannels));
    write_u32(os, static_cast<std::uint32_t>(kSceneCount));
    return os.str();
}

std::string scene_cache_bytes(std::size_t s, std::vector<double>& scratch) {
    render_scene(scene_factors(s), scratch.data());
    std::ostringstream os(std::ios::binary);
    for (double v : scratch) write_f32(os, static_cast<float>(v));
    return os.str();
}

}  // namespace

void write_dataset_cache(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
    const std::string header = cache_header_bytes();
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<double> img(kImageDim);
    for (std::size_t s = 0; s < kSceneCount; ++s) {
        const std::string chunk = scene_cache_bytes(s, img);
        os.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    }
    os.flush();
    if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

VerifyResult verify_dataset_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    VerifyResult r;
    if (!is) {
        r.message = "dataset: cannot open " + path;
        return r;
    }
    std::uint64_t offset = 0;
    std::string actual;
    auto matches = [&](const std::string& expected) {
        actual.resize(expected.size());
        is.read(actual.data(), static_cast<std::streamsize>(expected.size()));
        const std::size_t got = static_cast<std::size_t>(is.gcount());
        for (std::size_t i = 0; i < std::min(got, expected.size()); ++i) {
            if (actual[i] != expected[i]) {
                r.byte_offset = offset + i;
                r.message = "verification failure at byte offset " + std::to_string(r.byte_offset);
                return false;
            }
        }
        if (got < expected.size()) {
            r.byte_offset = offset + got;
            r.message = "verification failure: file truncated at byte offset " + std::to_string(r.byte_offset);
            return false;
        }
        offset += expected.size();
        return true;
    };

    if (!matches(cache_header_bytes())) return r;
    std::vector<double> img(kImageDim);
    for (std::size_t s = 0; s < kSceneCount; ++s)
        if (!matches(scene_cache_bytes(s, img))) return r;
    is.peek();
    if (!is.eof()) {
        r.byte_offset = offset;
        r.message = "verification failure: trailing bytes at offset " + std::to_string(offset);
        return r;
    }
    r.ok = true;
    r.message = "verified identical";
    return r;
}

}  // namespace fdis
