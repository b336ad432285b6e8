#include "attrcenter/synth/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "attrcenter/synth/png_io.hpp"
#include "attrcenter/util/rng.hpp"

namespace attrcenter::synth {

namespace fs = std::filesystem;

std::vector<std::size_t> assign_combinations(std::size_t n_identities, std::size_t n_combinations, std::uint64_t seed) {
  if (n_combinations == 0) throw std::invalid_argument("schema has no combinations");
  auto rng = make_rng(seed, {stream::kCombos});
  std::vector<std::size_t> out;
  out.reserve(n_identities);
  std::vector<std::size_t> pass(n_combinations);
  while (out.size() < n_identities) {
    std::iota(pass.begin(), pass.end(), 0);
    std::shuffle(pass.begin(), pass.end(), rng);
    for (auto c : pass) {
      if (out.size() == n_identities) break;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<Sample> synthesize(std::size_t n_identities, const lattice::AttributeSchema& schema, std::uint64_t seed,
                               const RenderConfig& cfg, std::size_t first_id) {
  if (n_identities < 2) throw std::invalid_argument("need at least 2 identities, got " + std::to_string(n_identities));
  // Combination assignment keys on the id offset too, so disjoint id ranges
  // drawn from one seed get independent assignments.
  const auto combos = assign_combinations(n_identities, schema.combination_count(), derive_seed(seed, {first_id}));
  std::vector<Sample> out;
  out.reserve(n_identities);
  for (std::size_t i = 0; i < n_identities; ++i) {
    const std::size_t id = first_id + i;
    const auto identity = make_identity(id, schema.decode(combos[i]), seed);
    auto face = render_identity(identity, schema, cfg);
    out.push_back({id, combos[i], std::move(face.photo), std::move(face.sketch)});
  }
  return out;
}

DatasetManifest generate_dataset(std::size_t n_identities, const lattice::AttributeSchema& schema, std::uint64_t seed,
                                 const fs::path& out_dir, const RenderConfig& cfg) {
  const auto samples = synthesize(n_identities, schema, seed, cfg);
  std::error_code ec;
  fs::create_directories(out_dir / "photos", ec);
  if (!ec) fs::create_directories(out_dir / "sketches", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  for (const auto& s : samples) {
    ManifestRow row{s.id, "photos/" + std::to_string(s.id) + ".png", "sketches/" + std::to_string(s.id) + ".png", s.combo};
    write_png(out_dir / row.photo, s.photo);
    write_png(out_dir / row.sketch, s.sketch);
    manifest.rows.push_back(std::move(row));
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "id,photo,sketch,combo\n";
  for (const auto& r : manifest.rows) out << r.id << ',' << r.photo << ',' << r.sketch << ',' << r.combo << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const fs::path& path, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,photo,sketch,combo") {
    throw IoError(path.string() + ": expected header id,photo,sketch,combo");
  }
  DatasetManifest m;
  m.split = split;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, photo, sketch, combo;
    if (!std::getline(ss, id, ',') || !std::getline(ss, photo, ',') || !std::getline(ss, sketch, ',') ||
        !std::getline(ss, combo)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    try {
      m.rows.push_back({std::stoul(id), photo, sketch, std::stoul(combo)});
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad integer field");
    }
  }
  return m;
}

void validate_manifest(const DatasetManifest& manifest, const lattice::AttributeSchema& schema, const fs::path& base_dir) {
  std::set<std::size_t> ids;
  for (const auto& r : manifest.rows) {
    if (!ids.insert(r.id).second) throw std::invalid_argument("duplicate id " + std::to_string(r.id) + " in split " + manifest.split);
    if (r.combo >= schema.combination_count()) {
      throw std::invalid_argument("id " + std::to_string(r.id) + ": combination " + std::to_string(r.combo) +
                                  " >= " + std::to_string(schema.combination_count()));
    }
  }
  for (const auto& r : manifest.rows) {
    for (const auto& p : {r.photo, r.sketch}) {
      if (!fs::exists(base_dir / p)) throw IoError("missing file " + (base_dir / p).string());
    }
  }
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const fs::path& base_dir) {
  std::vector<Sample> out;
  out.reserve(manifest.rows.size());
  for (const auto& r : manifest.rows) {
    Tensor photo = read_png(base_dir / r.photo);
    Tensor sketch = read_png(base_dir / r.sketch);
    if (photo.rank() != 3) throw IoError((base_dir / r.photo).string() + ": expected an RGB photo");
    if (sketch.rank() != 2) throw IoError((base_dir / r.sketch).string() + ": expected a grayscale sketch");
    out.push_back({r.id, r.combo, std::move(photo), std::move(sketch)});
  }
  return out;
}

}  // namespace attrcenter::synth
