#include "latefuse/cli/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "latefuse/core/errors.hpp"

namespace latefuse {

namespace fs = std::filesystem;

std::string tool_version() { return LATEFUSE_VERSION; }

namespace {

std::string hex(const unsigned char* data, unsigned int n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * n);
    for (unsigned int i = 0; i < n; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xf]);
    }
    return out;
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error(ErrorClass::internal, "sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
    std::string finish() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int n = 0;
        EVP_DigestFinal_ex(ctx_, md, &n);
        return hex(md, n);
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.finish();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "' for hashing");
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.finish();
}

nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& in : m.inputs) inputs.push_back({{"role", in.role}, {"path", in.path}, {"sha256", in.sha256}});
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& o : m.outputs) outputs.push_back({{"path", o.path}, {"sha256", o.sha256}});
    return {{"format", "latefuse-manifest"},
            {"version", kManifestVersion},
            {"command", m.command},
            {"tool_version", m.tool_version},
            {"seed", m.seed},
            {"config", m.config},
            {"config_sha256", m.config_sha256},
            {"inputs", inputs},
            {"outputs", outputs}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "latefuse-manifest") throw DataError("not a latefuse manifest");
        if (j.at("version") != kManifestVersion) {
            throw DataError("manifest version " + j.at("version").dump() + " is not supported (expected " +
                            std::to_string(kManifestVersion) + ")");
        }
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config = j.at("config");
        m.config_sha256 = j.at("config_sha256").get<std::string>();
        for (const auto& in : j.at("inputs")) {
            m.inputs.push_back({in.at("role").get<std::string>(), in.at("path").get<std::string>(),
                                in.at("sha256").get<std::string>()});
        }
        for (const auto& o : j.at("outputs")) {
            m.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

RunManifest read_manifest(const fs::path& path) { return manifest_from_json(read_json_file(path)); }

namespace {

void stamp(RunManifest& m) {
    m.tool_version = tool_version();
    m.config_sha256 = sha256_hex(m.config.dump());
}

}  // namespace

void write_manifest(const fs::path& dir, RunManifest manifest) {
    stamp(manifest);
    write_text_file(dir / kManifestName, dump_json(to_json(manifest)));
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_text_file(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write to '" + path.string() + "' failed");
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

nlohmann::json read_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

ArtifactWriter::ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) throw UsageError("output directory must not be empty");
    const fs::path parent = dir_.has_parent_path() ? dir_.parent_path() : fs::path(".");
    fs::create_directories(parent);
    const std::string leaf = dir_.filename().empty() ? "out" : dir_.filename().string();
    staging_ = parent / ("." + leaf + ".staging");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
}

ArtifactWriter::~ArtifactWriter() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
}

fs::path ArtifactWriter::stage(const std::string& name) {
    const fs::path rel(name);
    const bool escapes = std::any_of(rel.begin(), rel.end(), [](const fs::path& part) { return part == ".."; });
    if (name.empty() || rel.is_absolute() || escapes || name == kManifestName) {
        throw Error(ErrorClass::internal, "bad artifact name '" + name + "'");
    }
    if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
    const fs::path p = staging_ / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
}

void ArtifactWriter::write_text(const std::string& name, std::string_view text) { write_text_file(stage(name), text); }

void ArtifactWriter::write_json(const std::string& name, const nlohmann::json& j) { write_text(name, dump_json(j)); }

void ArtifactWriter::commit(RunManifest manifest) {
    if (committed_) throw Error(ErrorClass::internal, "artifact writer committed twice");
    std::sort(names_.begin(), names_.end());
    manifest.outputs.clear();
    for (const auto& name : names_) manifest.outputs.push_back({name, sha256_file(staging_ / name)});
    write_manifest(staging_, std::move(manifest));

    fs::create_directories(dir_);
    auto move_in = [&](const std::string& name) {
        const fs::path to = dir_ / name;
        if (to.has_parent_path()) fs::create_directories(to.parent_path());
        fs::rename(staging_ / name, to);
    };
    for (const auto& name : names_) move_in(name);
    move_in(kManifestName);
    committed_ = true;
}

}  // namespace latefuse
