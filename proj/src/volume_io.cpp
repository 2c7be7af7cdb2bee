#include "uad/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"

#include "uad/error.hpp"

namespace uad {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

void put_u32(std::vector<unsigned char> &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float to_f32_checked(double v) {
    if (std::fabs(v) > static_cast<double>(std::numeric_limits<float>::max()))
        throw NumericalError("value " + std::to_string(v) + " is not representable as float32");
    return static_cast<float>(v);
}

} // namespace

std::vector<unsigned char> encode_vol1(const Volume &v) {
    nlohmann::json header;
    header["dims"] = {v.dims().nx, v.dims().ny, v.dims().nz};
    header["spacing"] = {v.spacing().sx, v.spacing().sy, v.spacing().sz};
    header["dtype"] = "f32le";
    const std::string text = header.dump();

    std::vector<unsigned char> out;
    out.reserve(8 + text.size() + 4 * v.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (double x : v.data())
        put_u32(out, std::bit_cast<std::uint32_t>(to_f32_checked(x)));
    return out;
}

Volume decode_vol1(const std::vector<unsigned char> &bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a VOL1 file (bad magic)");
    const std::size_t header_len = get_u32(bytes.data() + 4);
    if (bytes.size() < 8 + header_len)
        throw FormatError("VOL1 header truncated");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("VOL1 header is not valid JSON: ") + e.what());
    }
    Dims dims;
    Spacing spacing;
    try {
        if (header.at("dtype").get<std::string>() != "f32le")
            throw FormatError("VOL1 dtype must be f32le");
        const auto &d = header.at("dims");
        const auto &s = header.at("spacing");
        if (d.size() != 3 || s.size() != 3)
            throw FormatError("VOL1 dims and spacing must have three entries");
        dims = {d[0].get<std::size_t>(), d[1].get<std::size_t>(), d[2].get<std::size_t>()};
        spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("VOL1 header malformed: ") + e.what());
    }

    const std::size_t payload = bytes.size() - 8 - header_len;
    if (payload != 4 * dims.count())
        throw FormatError("VOL1 payload length " + std::to_string(payload) + " does not match dims " +
                          dims.str() + " (expected " + std::to_string(4 * dims.count()) + ")");

    std::vector<double> data(dims.count());
    const unsigned char *p = bytes.data() + 8 + header_len;
    for (std::size_t i = 0; i < data.size(); ++i, p += 4) {
        const float f = std::bit_cast<float>(get_u32(p));
        if (!std::isfinite(f))
            throw FormatError("VOL1 payload contains a non-finite value at voxel " + std::to_string(i));
        data[i] = static_cast<double>(f);
    }
    return Volume(dims, spacing, std::move(data));
}

void save_volume(const Volume &v, const std::filesystem::path &path) { write_bytes(path, encode_vol1(v)); }

Volume load_volume(const std::filesystem::path &path) { return decode_vol1(read_bytes(path)); }

Volume quantise_f32(const Volume &v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<double>(to_f32_checked(v[i]));
    return v.with_data(std::move(out));
}

std::vector<unsigned char> encode_pgm(const SliceImage &s, PgmScaling scaling) {
    const std::string header = "P5\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + s.pixels.size());

    double lo = 0.0, hi = 0.0, maxabs = 0.0;
    if (!s.pixels.empty()) {
        lo = hi = s.pixels.front();
        for (double p : s.pixels) {
            lo = std::min(lo, p);
            hi = std::max(hi, p);
            maxabs = std::max(maxabs, std::fabs(p));
        }
    }
    for (double p : s.pixels) {
        double g = 0.0;
        if (scaling == PgmScaling::minmax)
            g = hi > lo ? 255.0 * (p - lo) / (hi - lo) : 0.0;
        else
            g = maxabs > 0.0 ? 127.5 + 127.5 * p / maxabs : 127.5;
        out.push_back(static_cast<unsigned char>(std::lround(std::clamp(g, 0.0, 255.0))));
    }
    return out;
}

void save_pgm(const SliceImage &s, const std::filesystem::path &path, PgmScaling scaling) {
    write_bytes(path, encode_pgm(s, scaling));
}

void write_bytes(const std::filesystem::path &path, const std::vector<unsigned char> &bytes) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw std::runtime_error("write failed: " + path.string());
}

std::vector<unsigned char> read_bytes(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    write_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path &path) {
    auto b = read_bytes(path);
    return std::string(b.begin(), b.end());
}

} // namespace uad
