#include "latefuse/arch/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'F', 'C', 'K'};

using Kind = CheckpointError::Kind;

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get_le(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    const char* take(std::size_t n, const char* what) {
        need(n, what);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n) {
            throw CheckpointError(Kind::corrupt, std::string("truncated file while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
    const auto& params = model.params();
    nlohmann::json dir = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        dir.push_back({{"name", params.name(i)}, {"shape", params.tensor(i).shape()}});
    }
    const nlohmann::json header = {{"config", to_json(model.config())}, {"extra", extra}, {"tensors", dir}};
    const std::string header_text = header.dump();

    std::string data;
    data.reserve(static_cast<std::size_t>(params.scalar_count()) * 4);
    for (const auto& t : params.tensors()) {
        for (float f : t.data()) put_le(data, float_bits(f));
    }

    std::string out(kMagic.begin(), kMagic.end());
    put_le(out, kCheckpointVersion);
    put_le(out, static_cast<std::uint64_t>(header_text.size()));
    out += header_text;
    out += data;
    put_le(out, fnv1a(data.data(), data.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(Kind::io, "cannot open '" + path.string() + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(Kind::io, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(Kind::io, "cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(bytes);
    if (std::memcmp(r.take(kMagic.size(), "magic"), kMagic.data(), kMagic.size()) != 0) {
        throw CheckpointError(Kind::corrupt, "'" + path.string() + "' is not a checkpoint (bad magic)");
    }
    const auto version = r.get_le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::version_mismatch, "format version " + std::to_string(version) +
                                                          ", this build reads " +
                                                          std::to_string(kCheckpointVersion));
    }
    const auto header_len = r.get_le<std::uint64_t>("header length");
    if (header_len > r.remaining()) throw CheckpointError(Kind::corrupt, "truncated file while reading header");
    const char* header_ptr = r.take(static_cast<std::size_t>(header_len), "header");

    nlohmann::json header;
    ModelConfig config;
    try {
        header = nlohmann::json::parse(header_ptr, header_ptr + header_len);
        config = model_config_from_json(header.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::corrupt, std::string("unreadable header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(Kind::corrupt, std::string("invalid config in header: ") + e.what());
    }
    if (expected && !(*expected == config)) {
        throw CheckpointError(Kind::config_mismatch, "file holds " + to_json(config).dump() + ", expected " +
                                                         to_json(*expected).dump());
    }

    const std::size_t data_begin = r.pos();
    ParamStore store;
    try {
        for (const auto& entry : header.at("tensors")) {
            const auto shape = entry.at("shape").get<Shape>();
            Tensor t(shape);
            const char* raw = r.take(t.size() * 4, "tensor data");
            for (std::size_t i = 0; i < t.size(); ++i) {
                std::uint32_t bits = 0;
                for (std::size_t b = 0; b < 4; ++b) {
                    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
                }
                t[i] = std::bit_cast<float>(bits);
            }
            store.add(entry.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::corrupt, std::string("bad tensor directory: ") + e.what());
    }
    const std::size_t data_len = r.pos() - data_begin;
    const auto stored = r.get_le<std::uint64_t>("checksum");
    if (stored != fnv1a(bytes.data() + data_begin, data_len)) {
        throw CheckpointError(Kind::corrupt, "checksum mismatch in '" + path.string() + "'");
    }
    if (r.remaining() != 0) throw CheckpointError(Kind::corrupt, "trailing bytes after checksum");

    nlohmann::json extra = header.contains("extra") ? header["extra"] : nlohmann::json::object();
    return Checkpoint{Model(config, std::move(store)), std::move(extra)};
}

}  // namespace latefuse
