#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fdis {

// Procedural sprite dataset: one object (square / disc / triangle) on a flat
// background, rendered at 32x32x3 with no anti-aliasing. The factor grid is
// exhaustive and the renderer is a pure function of the factor tuple, so the
// dataset is fully determined with no stored assets.

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageDim = kImageSize * kImageSize * kImageChannels;

inline constexpr std::array<std::size_t, 6> kFactorCards = {3, 4, 8, 8, 6, 4};
inline constexpr std::size_t kNumFactors = 6;
inline constexpr std::size_t kSceneCount = 3 * 4 * 8 * 8 * 6 * 4;  // 18432

enum class ShapeKind : int { kSquare = 0, kDisc = 1, kTriangle = 2 };

struct SceneFactors {
    int shape = 0;  // 0 square, 1 disc, 2 triangle
    int scale = 0;  // half-extent 3 + scale
    int x = 0;      // 8x8 position grid
    int y = 0;
    int hue = 0;    // object hue anchor index, k*60 deg
    int bg = 0;     // background hue anchor index, 30 + k*90 deg

    int factor(std::size_t i) const;
    bool operator==(const SceneFactors&) const = default;
};

std::size_t scene_index(const SceneFactors& f);
SceneFactors scene_factors(std::size_t index);

// Object center in pixel units for a grid coordinate (both axes).
inline double grid_center(int idx) { return 4.0 + 3.0 * idx + 1.5; }
inline double half_extent(int scale_idx) { return 3.0 + scale_idx; }

// Pixel-center inside tests, shared by the renderer and the oracle signature
// tables. dx/dy are pixel-center offsets from the object center (always
// integral on this grid). The square is half-open so a 6-unit box covers
// exactly 6x6 pixel centers; the disc is inclusive; the triangle is apex-up
// with half-width dy'/2 at depth dy' below the apex.
bool inside_square(double dx, double dy, double e);
bool inside_disc(double dx, double dy, double e);
bool inside_triangle(double dx, double dy, double e);
bool inside_shape(ShapeKind kind, double dx, double dy, double e);

// Exact object footprint for one (shape, scale, x, y) after clipping to the
// frame. At scale_idx 3 the footprint crosses the frame at the extreme grid
// positions (square/triangle at 0, disc at 0 and 7); the renderer simply does
// not paint those pixels, and this table accounts for that, so it stays exact
// for every scene. The 768 signatures are pairwise distinct, which is what
// makes attribute recovery by nearest signature well-posed.
struct ShapeSignature {
    int min_x = 0;
    int min_y = 0;
    int width = 0;
    int height = 0;
    int count = 0;
    bool operator==(const ShapeSignature&) const = default;
};

ShapeSignature shape_signature(ShapeKind kind, int scale, int x, int y);

// HSV (deg, [0,1], [0,1]) -> RGB in [0,1].
std::array<double, 3> hsv_to_rgb(double h_deg, double s, double v);

inline double object_hue_deg(int hue_idx) { return 60.0 * hue_idx; }
inline double background_hue_deg(int bg_idx) { return 30.0 + 90.0 * bg_idx; }
std::array<double, 3> object_color(int hue_idx);
std::array<double, 3> background_color(int bg_idx);

// Row-major [y][x][c] into out[kImageDim].
void render_scene(const SceneFactors& f, double* out);
std::vector<double> render_scene(const SceneFactors& f);

// ==================== dataset cache ====================

// Layout: magic, version, factor count + cardinalities, image dims, scene
// count, then all scenes in factor-lexicographic order as little-endian
// float32 (storage only; everything computes in float64 from the renderer).
void write_dataset_cache(const std::string& path);

struct VerifyResult {
    bool ok = false;
    std::uint64_t byte_offset = 0;  // first mismatching byte when !ok
    std::string message;
};

VerifyResult verify_dataset_cache(const std::string& path);

}  // namespace fdis
