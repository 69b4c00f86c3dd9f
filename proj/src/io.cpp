#include "fdis/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace fdis {

namespace {

void put_le(std::ostream& os, std::uint64_t v, int nbytes) {
    char buf[8];
    for (int i = 0; i < nbytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, nbytes);
    if (!os) throw std::runtime_error("io: write failed");
}

std::uint64_t get_le(std::istream& is, int nbytes) {
    char buf[8];
    is.read(buf, nbytes);
    if (is.gcount() != nbytes) throw std::runtime_error("io: unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v, 4); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v, 8); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v), 4); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v), 8); }

void write_f64_array(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) write_f64(os, x);
}

std::uint32_t read_u32(std::istream& is) { return static_cast<std::uint32_t>(get_le(is, 4)); }
std::uint64_t read_u64(std::istream& is) { return get_le(is, 8); }
float read_f32(std::istream& is) { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(is, 4))); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_le(is, 8)); }

std::vector<double> read_f64_array(std::istream& is, std::size_t count) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = read_f64(is);
    return v;
}

void write_magic(std::ostream& os) {
    os.write(kFileMagic, 4);
    if (!os) throw std::runtime_error("io: write failed");
    write_u32(os, kFormatVersion);
}

void read_magic(std::istream& is, const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (is.gcount() != 4 || std::memcmp(buf, kFileMagic, 4) != 0)
        throw std::runtime_error(what + ": bad magic");
    const std::uint32_t version = read_u32(is);
    if (version != kFormatVersion)
        throw std::runtime_error(what + ": unsupported format version " + std::to_string(version));
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!os) throw std::runtime_error("io: write failed");
}

std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    if (n > (1u << 20)) throw std::runtime_error("io: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (is.gcount() != static_cast<std::streamsize>(n)) throw std::runtime_error("io: unexpected end of file");
    return s;
}

void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<double>& pixels) {
    if (pixels.size() != 3 * width * height)
        throw std::invalid_argument("write_ppm: pixel count does not match dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
    os << "P6\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const double v = std::clamp(pixels[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write_ppm: write failed");
}

}  // namespace fdis
