#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iterator>
#include <limits>
#include <optional>

#include "json.hpp"

#include "uad/error.hpp"
#include "uad/vae.hpp"
#include "uad/volume_io.hpp"

namespace uad::vae {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'V', 'A', 'E', '1'};

void put_u32(std::vector<unsigned char> &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json arch_to_json(const Architecture &a) {
    return {{"input_dims", {a.input_dims.nx, a.input_dims.ny, a.input_dims.nz}},
            {"channels", a.channels},
            {"kernel", a.kernel},
            {"stride", a.stride},
            {"padding", a.padding},
            {"latent_dim", a.latent_dim},
            {"leaky_slope", a.leaky_slope},
            {"norm", to_string(a.norm)},
            {"output", to_string(a.output)}};
}

Architecture arch_from_json(const json &j) {
    Architecture a;
    const auto &d = j.at("input_dims");
    if (d.size() != 3)
        throw FormatError("checkpoint input_dims must have three entries");
    a.input_dims = {d[0].get<std::size_t>(), d[1].get<std::size_t>(), d[2].get<std::size_t>()};
    a.channels = j.at("channels").get<std::vector<std::size_t>>();
    a.kernel = j.at("kernel").get<std::size_t>();
    a.stride = j.at("stride").get<std::size_t>();
    a.padding = j.at("padding").get<std::size_t>();
    a.latent_dim = j.at("latent_dim").get<std::size_t>();
    a.leaky_slope = j.at("leaky_slope").get<double>();
    a.norm = parse_norm(j.at("norm").get<std::string>());
    a.output = parse_output(j.at("output").get<std::string>());
    return a;
}

json slots_to_json(const std::vector<TensorSlot> &slots) {
    json out = json::array();
    for (const auto &s : slots)
        out.push_back({{"name", s.name}, {"shape", s.shape}});
    return out;
}

void check_slots(const json &j, const std::vector<TensorSlot> &expected, const char *what) {
    if (!j.is_array() || j.size() != expected.size())
        throw FormatError(std::string("checkpoint ") + what + " list does not match the architecture");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (j[i].at("name").get<std::string>() != expected[i].name ||
            j[i].at("shape").get<std::vector<std::size_t>>() != expected[i].shape)
            throw FormatError(std::string("checkpoint ") + what + " entry " + std::to_string(i) +
                              " does not match the architecture (expected " + expected[i].name + ")");
    }
}

} // namespace

std::vector<unsigned char> encode_checkpoint(const VaeModel &m) {
    if (!m.all_finite())
        throw NumericalError("refusing to write a checkpoint with non-finite parameters");
    const json header = {{"architecture", arch_to_json(m.arch())},
                         {"params", slots_to_json(m.param_slots())},
                         {"buffers", slots_to_json(m.buffer_slots())},
                         {"dtype", "f32le"}};
    const std::string text = header.dump();
    std::vector<unsigned char> out;
    out.reserve(8 + text.size() + 4 * (m.params().size() + m.buffers().size()));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    auto put = [&](std::span<const double> v) {
        for (double x : v) {
            if (std::fabs(x) > static_cast<double>(std::numeric_limits<float>::max()))
                throw NumericalError("parameter is not representable as float32");
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
        }
    };
    put(m.params());
    put(m.buffers());
    return out;
}

VaeModel decode_checkpoint(const std::vector<unsigned char> &bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a VAE1 checkpoint (bad magic)");
    const std::size_t header_len = get_u32(bytes.data() + 4);
    if (bytes.size() < 8 + header_len)
        throw FormatError("VAE1 header truncated");
    std::optional<VaeModel> model;
    try {
        const json header =
            json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
        if (header.at("dtype").get<std::string>() != "f32le")
            throw FormatError("VAE1 dtype must be f32le");
        model.emplace(arch_from_json(header.at("architecture")));
        check_slots(header.at("params"), model->param_slots(), "params");
        check_slots(header.at("buffers"), model->buffer_slots(), "buffers");
    } catch (const json::exception &e) {
        throw FormatError(std::string("VAE1 header malformed: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw FormatError(std::string("VAE1 architecture invalid: ") + e.what());
    }

    const std::size_t np = model->params().size(), nb = model->buffers().size();
    if (bytes.size() - 8 - header_len != 4 * (np + nb))
        throw FormatError("VAE1 payload length does not match the descriptor");
    const unsigned char *p = bytes.data() + 8 + header_len;
    auto get = [&](std::span<double> dst) {
        for (auto &x : dst) {
            const float f = std::bit_cast<float>(get_u32(p));
            p += 4;
            if (!std::isfinite(f))
                throw FormatError("VAE1 payload contains a non-finite value");
            x = static_cast<double>(f);
        }
    };
    get(model->params());
    get(model->buffers());
    return std::move(*model);
}

void save_checkpoint(const VaeModel &m, const std::filesystem::path &path) { write_bytes(path, encode_checkpoint(m)); }

VaeModel load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_bytes(path)); }

} // namespace uad::vae
