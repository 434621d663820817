#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sgstereo/pipeline.hpp"
#include "sgstereo/synthetic.hpp"

namespace sgstereo::io {

/// Parse failures carry the byte offset where reading stopped making sense.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset);
    std::size_t byte_offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

// --- PFM (single-channel "Pf", bottom row first) ---
// Writes little-endian (scale -1.0) always; readers accept both
// endiannesses. Invalid pixels are written as 0 and the mask goes to a
// sibling PGM ("<path>.mask.pgm", 0 = invalid, 255 = valid); reading
// restores the mask when the sidecar exists, otherwise everything is valid.
void write_pfm(const DisparityMap& map, const std::filesystem::path& path);
DisparityMap read_pfm(const std::filesystem::path& path);

void write_pgm_mask(const std::vector<std::uint8_t>& valid, int height, int width,
                    const std::filesystem::path& path);
std::vector<std::uint8_t> read_pgm_mask(const std::filesystem::path& path, int height, int width);

// --- CSV (RFC-style quoting) ---
std::string csv_escape(const std::string& field);
void write_csv(const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows,
               const std::filesystem::path& path);

/// Fixed-format float for CSV cells; deterministic byte-for-byte.
std::string format_double(double v);

// --- flat key = value config files ---
// Every TrainConfig field must be present; unknown keys are rejected by
// name, type mismatches are reported with their line number.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& text);
std::string serialize_config(const TrainConfig& cfg);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

// --- model weights (little-endian binary, "SGWT" magic) ---
void write_weights(const RefinerModel& model, const std::filesystem::path& path);
RefinerModel read_weights(const std::filesystem::path& path);

/// Git-blob-style content hash: SHA-1 of "blob <len>\0" + bytes, hex.
std::string git_blob_sha1(const std::string& bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

// --- run manifest ---
struct RunManifest {
    std::string command;
    std::uint64_t seed = 0;
    TrainConfig config;
    std::vector<std::pair<std::string, std::string>> outputs;  ///< (path, blob hash)
    std::map<std::string, double> metrics;                     ///< empty if not applicable

    bool operator==(const RunManifest&) const = default;
};

std::string serialize_manifest(const RunManifest& m);
RunManifest parse_manifest(const std::string& text);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace sgstereo::io
