#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fdis {

// Little-endian binary primitives shared by the dataset cache, codec, and
// checkpoint formats. All files open with the 4-byte magic "FDIS" followed by
// a format-version u32.

inline constexpr char kFileMagic[4] = {'F', 'D', 'I', 'S'};
inline constexpr std::uint32_t kFormatVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_f64_array(std::ostream& os, const std::vector<double>& v);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::vector<double> read_f64_array(std::istream& is, std::size_t count);

void write_magic(std::ostream& os);
// Throws with `what` context if magic or version do not match.
void read_magic(std::istream& is, const std::string& what);

void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

// Binary 8-bit PPM (P6). pixels are row-major RGB, length 3*width*height;
// values are clamped to [0, 1] and rounded to the nearest of 256 levels.
void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<double>& pixels);

}  // namespace fdis
