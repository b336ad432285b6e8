#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "attrcenter/lattice/schema.hpp"
#include "attrcenter/synth/render.hpp"

namespace attrcenter::synth {

struct Sample {
  std::size_t id = 0;
  std::size_t combo = 0;
  Tensor photo;   // 3 x H x W
  Tensor sketch;  // H x W
};

struct ManifestRow {
  std::size_t id = 0;
  std::string photo;
  std::string sketch;
  std::size_t combo = 0;
};

struct DatasetManifest {
  std::string split = "all";
  std::vector<ManifestRow> rows;
};

/// Combination index per identity: whole shuffled passes over all n_c
/// combinations, so min(n, n_c) distinct combinations appear and every
/// combination appears at least floor(n / n_c) times.
std::vector<std::size_t> assign_combinations(std::size_t n_identities, std::size_t n_combinations, std::uint64_t seed);

/// Identities first_id .. first_id + n - 1, rendered in memory.
std::vector<Sample> synthesize(std::size_t n_identities, const lattice::AttributeSchema& schema, std::uint64_t seed,
                               const RenderConfig& cfg, std::size_t first_id = 0);

/// Writes photos/<id>.png, sketches/<id>.png and manifest.csv under out_dir.
DatasetManifest generate_dataset(std::size_t n_identities, const lattice::AttributeSchema& schema, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const RenderConfig& cfg);

/// CSV with header id,photo,sketch,combo. Paths are relative to the manifest.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path, const std::string& split = "all");
/// Validates ids, combination range and file existence. Throws IoError or
/// std::invalid_argument.
void validate_manifest(const DatasetManifest& manifest, const lattice::AttributeSchema& schema,
                       const std::filesystem::path& base_dir);
std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

}  // namespace attrcenter::synth
