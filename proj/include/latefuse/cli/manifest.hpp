#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace latefuse {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

std::string tool_version();

std::string sha256_hex(std::string_view bytes);
// Throws DataError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct ManifestInput {
    std::string role;  // "corpus", "checkpoint", "dataset", ...
    std::string path;  // as recorded in the config snapshot
    std::string sha256;
};

struct ManifestOutput {
    std::string path;  // relative to the artifact directory
    std::string sha256;
};

// What produced an artifact directory. No timestamps or host details, so
// two runs from the same manifest and inputs write identical manifests.
struct RunManifest {
    std::string command;
    nlohmann::json config;          // option snapshot; enough to re-run
    std::string config_sha256;      // of config.dump()
    std::uint64_t seed = 0;
    std::vector<ManifestInput> inputs;
    std::vector<ManifestOutput> outputs;  // sorted by path
    std::string tool_version;
};

nlohmann::json to_json(const RunManifest& m);
// Throws DataError on a malformed manifest or an unknown format version.
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest read_manifest(const std::filesystem::path& path);
// Stamps tool version and config hash, then writes dir/manifest.json.
void write_manifest(const std::filesystem::path& dir, RunManifest manifest);

// Canonical text used for every JSON artifact: two-space indent, sorted
// keys, trailing newline.
std::string dump_json(const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Collects a command's outputs in a staging directory next to the target
// and moves them into place only on commit(), so a failed command leaves no
// partial artifacts. The destructor discards uncommitted output.
class ArtifactWriter {
public:
    explicit ArtifactWriter(std::filesystem::path dir);
    ~ArtifactWriter();
    ArtifactWriter(const ArtifactWriter&) = delete;
    ArtifactWriter& operator=(const ArtifactWriter&) = delete;

    const std::filesystem::path& dir() const noexcept { return dir_; }

    // Staging path for a relative output name; records the name.
    std::filesystem::path stage(const std::string& name);
    void write_text(const std::string& name, std::string_view text);
    void write_json(const std::string& name, const nlohmann::json& j);

    // Fills manifest.outputs with every staged file and its hash, writes the manifest and moves everything into
    // dir(). Files of the same name are replaced; other files are untouched.
    void commit(RunManifest manifest);

private:
    std::filesystem::path dir_;
    std::filesystem::path staging_;
    std::vector<std::string> names_;
    bool committed_ = false;
};

}  // namespace latefuse
