#include "attrcenter/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "attrcenter/synth/png_io.hpp"
#include "attrcenter/util/rng.hpp"

namespace attrcenter::eval {

using ad::Shape;

GalleryIndex::GalleryIndex(std::vector<std::size_t> ids, Tensor embeddings)
    : ids_(std::move(ids)), embeddings_(std::move(embeddings)) {
  if (ids_.empty()) throw std::invalid_argument("gallery is empty");
  if (embeddings_.rank() != 2 || embeddings_.dim(0) != ids_.size()) {
    throw ad::ShapeError("gallery: " + std::to_string(ids_.size()) + " ids but embeddings of shape " +
                         ad::shape_str(embeddings_.shape()));
  }
  if (!embeddings_.all_finite()) throw std::invalid_argument("gallery embeddings must be finite");
  std::set<std::size_t> seen;
  for (auto id : ids_)
    if (!seen.insert(id).second) throw std::invalid_argument("gallery id " + std::to_string(id) + " appears twice");
}

GalleryIndex build_gallery(const encoders::Encoder& photo, std::span<const synth::Sample> mugshots) {
  std::vector<std::size_t> ids;
  for (const auto& s : mugshots) ids.push_back(s.id);
  return {std::move(ids), trainer::embed_photos(photo, mugshots)};
}

RankedList rank_embedding(const GalleryIndex& gallery, std::span<const double> probe, std::size_t probe_id) {
  const std::size_t n = gallery.size(), d = gallery.dim();
  if (probe.size() != d) {
    throw ad::ShapeError("probe has dim " + std::to_string(probe.size()) + ", gallery has " + std::to_string(d));
  }
  std::vector<double> dist(n, 0.0);
  const auto& e = gallery.embeddings();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < d; ++q) dist[i] += (e.at(i, q) - probe[q]) * (e.at(i, q) - probe[q]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto ids = gallery.ids();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return ids[a] < ids[b];
  });
  RankedList out;
  out.probe_id = probe_id;
  for (auto i : order) {
    out.ids.push_back(ids[i]);
    out.distances.push_back(dist[i]);
  }
  return out;
}

RankedList rank_probe(const GalleryIndex& gallery, const Tensor& sketch, const lattice::AttributeSchema& schema,
                      const lattice::AttributeCombination& combo, const encoders::Encoder& sketch_encoder,
                      bool use_attributes) {
  const Tensor input = use_attributes ? encoders::assemble_sketch_input(sketch, schema, combo)
                                      : encoders::assemble_blind_input(sketch, schema.binary_attribute_count());
  const Tensor emb = sketch_encoder.encode(input);
  return rank_embedding(gallery, emb.data());
}

std::size_t rank_of(const RankedList& list, std::size_t true_id) {
  const auto it = std::find(list.ids.begin(), list.ids.end(), true_id);
  if (it == list.ids.end()) {
    throw std::invalid_argument("identity " + std::to_string(true_id) + " is not in the gallery (closed-set protocol)");
  }
  return static_cast<std::size_t>(it - list.ids.begin()) + 1;
}

double Cmc::at(std::size_t k) const {
  if (accuracy.empty()) return 0.0;
  if (k == 0) return 0.0;
  return accuracy[std::min(k, accuracy.size()) - 1];
}

Cmc cmc_from_ranks(std::span<const std::size_t> ranks, std::size_t gallery_size) {
  if (ranks.empty()) throw std::invalid_argument("cmc: no probes");
  std::vector<std::size_t> hist(gallery_size + 1, 0);
  for (auto r : ranks) {
    if (r == 0 || r > gallery_size) throw std::invalid_argument("cmc: rank " + std::to_string(r) + " outside gallery");
    ++hist[r];
  }
  Cmc c;
  c.accuracy.resize(gallery_size);
  std::size_t acc = 0;
  for (std::size_t k = 1; k <= gallery_size; ++k) {
    acc += hist[k];
    c.accuracy[k - 1] = static_cast<double>(acc) / static_cast<double>(ranks.size());
  }
  return c;
}

Cmc cmc(std::span<const RankedList> lists, std::span<const std::size_t> true_ids) {
  if (lists.size() != true_ids.size()) throw std::invalid_argument("cmc: lists and true ids differ in length");
  if (lists.empty()) throw std::invalid_argument("cmc: no probes");
  std::vector<std::size_t> ranks;
  for (std::size_t i = 0; i < lists.size(); ++i) ranks.push_back(rank_of(lists[i], true_ids[i]));
  return cmc_from_ranks(ranks, lists.front().ids.size());
}

EvalReport evaluate(const trainer::TrainState& model, bool use_attributes, std::span<const synth::Sample> gallery,
                    const ProbeSet& probes) {
  const auto& schema = model.registry.schema();
  const GalleryIndex index = build_gallery(model.photo, gallery);
  const Tensor probe_emb = trainer::embed_sketches(model.sketch, schema, probes.probes, use_attributes, probes.probe_combos);
  std::vector<std::size_t> combo_of_id;
  for (const auto& g : gallery) {
    if (g.id >= combo_of_id.size()) combo_of_id.resize(g.id + 1, 0);
    combo_of_id[g.id] = g.combo;
  }
  EvalReport report;
  report.gallery_size = index.size();
  const std::size_t d = index.dim();
  for (std::size_t i = 0; i < probes.probes.size(); ++i) {
    const auto& p = probes.probes[i];
    const std::span<const double> row(probe_emb.data().data() + i * d, d);
    const RankedList list = rank_embedding(index, row, p.id);
    report.probe_ids.push_back(p.id);
    report.mate_ranks.push_back(rank_of(list, p.id));
    const auto truth = schema.decode(p.combo);
    for (std::size_t r = 0; r < std::min<std::size_t>(5, list.ids.size()); ++r) {
      if (lattice::contradiction_count(truth, schema.decode(combo_of_id[list.ids[r]])) >= 2) ++report.top5_contradictions;
    }
  }
  report.curve = cmc_from_ranks(report.mate_ranks, report.gallery_size);
  return report;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw synth::IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_rank_csv(const std::filesystem::path& path, const EvalReport& report) {
  auto out = open_out(path);
  out << "probe_id,rank_of_mate\n";
  for (std::size_t i = 0; i < report.probe_ids.size(); ++i) out << report.probe_ids[i] << ',' << report.mate_ranks[i] << '\n';
}

void write_cmc_csv(const std::filesystem::path& path, const Cmc& curve, std::span<const std::size_t> ks) {
  auto out = open_out(path);
  out << "k,accuracy\n";
  if (ks.empty()) {
    for (std::size_t k = 1; k <= curve.accuracy.size(); ++k) out << k << ',' << fmt(curve.at(k)) << '\n';
  } else {
    for (auto k : ks) out << k << ',' << fmt(curve.at(k)) << '\n';
  }
}

std::vector<std::size_t> read_rank_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw synth::IoError("cannot open report " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "probe_id,rank_of_mate") {
    throw synth::IoError(path.string() + ": expected header probe_id,rank_of_mate");
  }
  std::vector<std::size_t> ranks;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      ranks.push_back(std::stoul(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw synth::IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  return ranks;
}

std::vector<std::size_t> perturb_attributes(std::span<const synth::Sample> probes, const lattice::AttributeSchema& schema,
                                            double q, std::uint64_t seed) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("attribute noise must be in [0, 1]");
  std::vector<std::size_t> out;
  out.reserve(probes.size());
  for (const auto& p : probes) {
    auto rng = make_rng(seed, {stream::kAttrNoise, p.id});
    std::bernoulli_distribution flip(q);
    const auto combo = schema.decode(p.combo);
    std::vector<std::size_t> states(combo.states().begin(), combo.states().end());
    for (std::size_t c = 0; c < states.size(); ++c) {
      if (!flip(rng)) continue;
      const std::size_t n = schema.category(c).state_count();
      std::uniform_int_distribution<std::size_t> other(0, n - 2);
      const std::size_t s = other(rng);
      states[c] = s >= states[c] ? s + 1 : s;
    }
    out.push_back(schema.encode(states));
  }
  return out;
}

// ---- protocols -----------------------------------------------------------

Protocol parse_protocol(const std::string& name) {
  if (name == "P1") return Protocol::P1;
  if (name == "P2") return Protocol::P2;
  if (name == "P3") return Protocol::P3;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected P1, P2 or P3)");
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::P1: return "P1";
    case Protocol::P2: return "P2";
    case Protocol::P3: return "P3";
  }
  return "?";
}

void ProtocolConfig::validate() const {
  if (identities < 4) throw std::invalid_argument("eval.identities must be at least 4");
  if (folds == 0) throw std::invalid_argument("eval.folds must be positive");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw std::invalid_argument("eval.train_ratio must be in (0, 1)");
  if (gallery_factor == 0) throw std::invalid_argument("eval.gallery_factor must be positive");
  if (ks.empty()) throw std::invalid_argument("eval.ks must not be empty");
  for (auto k : ks)
    if (k == 0) throw std::invalid_argument("eval.ks entries must be positive");
  if (!(attr_noise >= 0.0 && attr_noise <= 1.0)) throw std::invalid_argument("eval.attr_noise must be in [0, 1]");
}

Split split_identities(std::size_t n, double train_ratio, std::uint64_t seed, std::size_t fold) {
  const auto n_train = static_cast<std::size_t>(std::lround(static_cast<double>(n) * train_ratio));
  if (n_train < 2 || n_train + 1 > n) {
    throw std::invalid_argument("cannot split " + std::to_string(n) + " identities with train ratio " +
                                std::to_string(train_ratio));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, {stream::kSplit, fold});
  std::shuffle(order.begin(), order.end(), rng);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}


std::vector<synth::Sample> pretrain_pool(std::size_t n, const lattice::AttributeSchema& schema, std::uint64_t seed,
                                         const synth::RenderConfig& render) {
  return synth::synthesize(n, schema, derive_seed(seed, {kPretrainIdBase}), render, kPretrainIdBase);
}

Benchmark make_benchmark(const ProtocolConfig& proto, const trainer::TrainConfig& train,
                         const lattice::AttributeSchema& schema, std::size_t fold, bool unseen_style_probes,
                         bool with_distractors) {
  proto.validate();
  const auto all = synth::synthesize(proto.identities, schema, proto.seed, proto.render);
  const auto split = split_identities(proto.identities, proto.train_ratio, proto.seed, fold);
  Benchmark b;
  for (auto i : split.train) b.train.push_back(all[i]);
  if (unseen_style_probes) {
    const auto restyled = synth::synthesize(proto.identities, schema, proto.seed, proto.unseen_style);
    for (auto i : split.test) {
      synth::Sample s = all[i];
      s.sketch = restyled[i].sketch;
      b.test.push_back(std::move(s));
    }
  } else {
    for (auto i : split.test) b.test.push_back(all[i]);
  }
  if (with_distractors && proto.gallery_factor > 1) {
    const std::size_t count = (proto.gallery_factor - 1) * b.test.size();
    b.distractors = synth::synthesize(count, schema, derive_seed(proto.seed, {kDistractorIdBase, fold}), proto.render,
                                      kDistractorIdBase);
  }
  if (train.pretrain_identities > 0) {
    b.pretrain_pool = pretrain_pool(train.pretrain_identities, schema, proto.seed, proto.render);
  }
  return b;
}

namespace {

std::vector<synth::Sample> gallery_of(const Benchmark& b, bool extended) {
  std::vector<synth::Sample> g(b.test.begin(), b.test.end());
  if (extended) g.insert(g.end(), b.distractors.begin(), b.distractors.end());
  return g;
}

EvalReport evaluate_on(const trainer::TrainState& model, bool use_attributes, const Benchmark& b, bool extended,
                       const ProtocolConfig& proto) {
  const auto gallery = gallery_of(b, extended);
  std::vector<std::size_t> noisy;
  if (proto.attr_noise > 0.0) noisy = perturb_attributes(b.test, model.registry.schema(), proto.attr_noise, proto.seed);
  return evaluate(model, use_attributes, gallery, {b.test, noisy});
}

void summarise(ProtocolReport& r) {
  r.mean.assign(r.ks.size(), 0.0);
  r.stddev.assign(r.ks.size(), 0.0);
  const double n = static_cast<double>(r.folds.size());
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    for (const auto& f : r.folds) r.mean[i] += f.report.curve.at(r.ks[i]) / n;
    for (const auto& f : r.folds) r.stddev[i] += std::pow(f.report.curve.at(r.ks[i]) - r.mean[i], 2) / n;
    r.stddev[i] = std::sqrt(r.stddev[i]);
  }
}

}  // namespace

ProtocolReport run_protocol(Protocol protocol, const ProtocolConfig& proto, const trainer::TrainConfig& train,
                            const lattice::AttributeSchema& schema) {
  proto.validate();
  train.validate();
  ProtocolReport report;
  report.protocol = protocol;
  report.ks = proto.ks;
  for (std::size_t fold = 0; fold < proto.folds; ++fold) {
    const Benchmark b = make_benchmark(proto, train, schema, fold, protocol == Protocol::P3, protocol == Protocol::P2);
    trainer::TrainConfig cfg = train;
    cfg.seed = derive_seed(train.seed, {fold});
    const auto model = trainer::fit(schema, cfg, b.train, b.pretrain_pool);
    report.folds.push_back({fold, evaluate_on(model, cfg.use_attributes, b, protocol == Protocol::P2, proto)});
  }
  summarise(report);
  return report;
}

void write_protocol_csv(const std::filesystem::path& path, const ProtocolReport& report) {
  auto out = open_out(path);
  out << "protocol,fold,k,accuracy\n";
  const auto name = protocol_name(report.protocol);
  for (const auto& f : report.folds)
    for (auto k : report.ks) out << name << ',' << f.fold << ',' << k << ',' << fmt(f.report.curve.at(k)) << '\n';
  for (std::size_t i = 0; i < report.ks.size(); ++i) out << name << ",mean," << report.ks[i] << ',' << fmt(report.mean[i]) << '\n';
  for (std::size_t i = 0; i < report.ks.size(); ++i) out << name << ",std," << report.ks[i] << ',' << fmt(report.stddev[i]) << '\n';
}

// ---- ablation ------------------------------------------------------------

namespace {

ArmResult run_arm(const Benchmark& b, const trainer::TrainConfig& cfg, const ProtocolConfig& proto,
                  const lattice::AttributeSchema& schema) {
  const auto model = trainer::fit(schema, cfg, b.train, b.pretrain_pool);
  const auto standard = evaluate_on(model, cfg.use_attributes, b, false, proto);
  const auto extended = evaluate_on(model, cfg.use_attributes, b, true, proto);
  ArmResult r;
  for (auto k : proto.ks) {
    r.rank_k.push_back(standard.curve.at(k));
    r.extended_rank_k.push_back(extended.curve.at(k));
  }
  r.top5_contradictions = standard.top5_contradictions;
  r.min_center_sq_distance = model.registry.min_pairwise_sq_distance();
  return r;
}

}  // namespace

AblationReport ablate_attributes(const ProtocolConfig& proto, const trainer::TrainConfig& train,
                                 const lattice::AttributeSchema& schema, std::span<const std::uint64_t> seeds) {
  proto.validate();
  train.validate();
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  AblationReport report;
  report.ks = proto.ks;
  for (auto seed : seeds) {
    ProtocolConfig p = proto;
    p.seed = seed;
    trainer::TrainConfig attr = train;
    attr.seed = seed;
    attr.use_attributes = true;
    const Benchmark b = make_benchmark(p, attr, schema, 0, false, true);
    AblationRow row;
    row.seed = seed;
    row.attribute = run_arm(b, attr, p, schema);
    row.baseline = run_arm(b, trainer::TrainConfig::baseline_from(attr), p, schema);
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
  auto out = open_out(path);
  out << "seed,arm,gallery,k,accuracy\n";
  for (const auto& r : report.rows) {
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
      const auto k = report.ks[i];
      out << r.seed << ",attribute,standard," << k << ',' << fmt(r.attribute.rank_k[i]) << '\n';
      out << r.seed << ",baseline,standard," << k << ',' << fmt(r.baseline.rank_k[i]) << '\n';
      out << r.seed << ",delta,standard," << k << ',' << fmt(r.attribute.rank_k[i] - r.baseline.rank_k[i]) << '\n';
      out << r.seed << ",attribute,extended," << k << ',' << fmt(r.attribute.extended_rank_k[i]) << '\n';
      out << r.seed << ",baseline,extended," << k << ',' << fmt(r.baseline.extended_rank_k[i]) << '\n';
      out << r.seed << ",delta,extended," << k << ','
          << fmt(r.attribute.extended_rank_k[i] - r.baseline.extended_rank_k[i]) << '\n';
    }
  }
}

}  // namespace attrcenter::eval
