#pragma once

#include "ganprint/common.hpp"
#include "ganprint/dataset.hpp"
#include "ganprint/encoder.hpp"
#include "ganprint/fingerprint.hpp"
#include "ganprint/metric.hpp"
#include "ganprint/modelzoo.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ganprint::store {

// Container layout (little-endian):
//   magic[8] "GPSTORE1" | u32 version | u32 kind | u64 meta_len | u64 payload_len
//   | u64 checksum (FNV-1a over meta then payload) | meta (UTF-8 JSON) | payload
inline constexpr std::uint32_t kFormatVersion = 1;

enum class ArtifactKind : std::uint32_t {
  variant = 1,
  encoder = 2,
  svd = 3,
  metric = 4,
  manifest = 5,
  fingerprints = 6,
  activations = 7,
};

const char* kind_name(ArtifactKind kind);

struct ArtifactHeader {
  ArtifactKind kind = ArtifactKind::variant;
  std::uint32_t version = kFormatVersion;
  nlohmann::json meta;
  std::uint64_t payload_size = 0;
  std::uint64_t checksum = 0;
};

struct RawArtifact {
  ArtifactHeader header;
  std::vector<std::byte> payload;
};

std::size_t write_container(const std::filesystem::path& path, ArtifactKind kind, const nlohmann::json& meta,
                            std::span<const std::byte> payload);
// Validates magic, version, lengths, checksum and kind before returning.
RawArtifact read_container(const std::filesystem::path& path, ArtifactKind expected);
ArtifactHeader read_header(const std::filesystem::path& path);

// Temp file in the same directory, then rename.
void write_bytes_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);
std::uint64_t file_checksum(const std::filesystem::path& path);

std::size_t save(const modelzoo::ModelVariant& variant, const std::filesystem::path& path);
modelzoo::ModelVariant load_variant(const std::filesystem::path& path);

std::size_t save(const encoder::EncoderNet& net, const std::filesystem::path& path,
                 const nlohmann::json& extra = nlohmann::json::object());
encoder::EncoderNet load_encoder(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

std::size_t save(const fingerprint::SvdBasis& basis, const std::filesystem::path& path);
fingerprint::SvdBasis load_svd(const std::filesystem::path& path);

std::size_t save(const metric::LearnedMetric& metric, const std::filesystem::path& path);
metric::LearnedMetric load_metric(const std::filesystem::path& path);

nlohmann::json to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

nlohmann::json to_json(const modelzoo::ArchitectureSpec& arch);
modelzoo::ArchitectureSpec arch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const encoder::EncoderSpec& spec);
encoder::EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

struct FingerprintSet {
  std::vector<fingerprint::FingerprintVector> vectors;
  std::uint64_t basis_checksum = 0;
};

// Binary matrix at `path` plus a JSON sidecar (<path>.json) with ids and the basis checksum.
void save_fingerprints(const FingerprintSet& set, const std::filesystem::path& path);
FingerprintSet load_fingerprints(const std::filesystem::path& path);
// Throws IntegrityError when the set was produced by a different basis.
FingerprintSet load_fingerprints(const std::filesystem::path& path, std::uint64_t expected_basis_checksum);

struct ActivationSet {
  std::vector<std::vector<float>> rows;
  std::vector<std::string> model_ids;
  std::vector<std::string> image_ids;
};

void save_activations(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet load_activations(const std::filesystem::path& path);

}  // namespace ganprint::store
